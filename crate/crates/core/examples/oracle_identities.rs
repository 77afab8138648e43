//! Exact identities on one random discrete world: optimal decoders per code,
//! the unregularized optimum, the ELBO decomposition and the Gibbs chain of
//! the full-table decoder.
//!
//! cargo run --example oracle_identities [seed]

use llens::oracle::{
    derive_joint, elbo_decomposition_check, full_table_decoder, gibbs_chain_exact, optimal_factorized_decoder,
    optimal_gaussian_decoder, unregularized_optimum_identity, DiscreteWorld, ModelJoint,
};
use llens::rng::stream;

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn main() -> llens::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = stream(seed, "world");
    let world = DiscreteWorld::random(3, 3, &mut rng)?;
    println!("p_data = {}", fmt(world.p_data()));

    let joint = derive_joint(&world);
    let gauss = optimal_gaussian_decoder(&world);
    let fact = optimal_factorized_decoder(&world);
    for z in 0..world.m() {
        println!("z = {z}  q(z) = {:.3}", joint.q_z[z]);
        if let (Some(mean), Some(loss)) = (&gauss.mean_per_z[z], gauss.loss_per_z[z]) {
            println!("  gaussian mean {}  expected squared error {loss:.4}", fmt(mean));
        }
        if let (Some(p), Some(ll)) = (&fact.p_per_z[z], fact.log_lik_per_z[z]) {
            println!("  bernoulli p   {}  expected log-likelihood {ll:.4}", fmt(p));
        }
    }

    let id = unregularized_optimum_identity(&world);
    println!(
        "unregularized optimum {:.6} = I {:.6} - H {:.6}  (residual {:.1e})",
        id.objective_at_opt, id.mi, id.entropy_pdata, id.residual
    );

    let model = ModelJoint::random(world.num_states(), world.m(), &mut rng)?;
    let d = elbo_decomposition_check(&world, &model)?;
    println!(
        "ELBO {:.6} = -H {:.6} - KL(data||model) {:.6} - E KL(posteriors) {:.6}  (residual {:.1e})",
        d.lhs, d.neg_entropy_pdata, d.kl_data_model, d.mean_kl_posteriors, d.residual
    );

    let chain = gibbs_chain_exact(&world, &full_table_decoder(&world))?;
    println!("full-table Gibbs chain: ergodic {}, period {}", chain.ergodic, chain.period);
    if let Some(pi) = chain.unique_stationary() {
        println!("stationary = {}", fmt(pi));
    }
    Ok(())
}
