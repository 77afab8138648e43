//! Gibbs sampling `x -> z ~ q(z|x) -> x ~ p(x|z)` with the full-table decoder.
//! On an ergodic world the empirical state frequencies approach `p_data`; when
//! the code copies a bit the chain is stuck in the half it started from.
//!
//! cargo run --example gibbs_chain

use llens::oracle::{full_table_decoder, gibbs_chain_exact, total_variation, DiscreteWorld};
use llens::rng::stream;
use llens::samplers::{binary_noise, empirical_state_distribution, gibbs_sample, ChainInit, GibbsConfig, TableDecoder, WorldEncoder};

fn run(label: &str, world: &DiscreteWorld) -> llens::Result<()> {
    let table = full_table_decoder(world);
    let exact = gibbs_chain_exact(world, &table)?;
    let encoder = WorldEncoder::new(world)?;
    let decoder = TableDecoder::for_world(world, table)?;
    let mut rng = stream(0, label);
    let init = binary_noise(4, world.n(), &mut rng);
    let cfg = GibbsConfig { burn_in: 200, thin: 1, count: 20_000, init: ChainInit::Noise };
    let xs = gibbs_sample(&encoder, &decoder, init, &cfg, rng)?;
    let emp = empirical_state_distribution(world, &xs)?;
    println!(
        "{label:<10} ergodic {:<5} recurrent classes {}  TV(empirical, p_data) = {:.4}",
        exact.ergodic,
        exact.recurrent_classes.len(),
        total_variation(&emp, world.p_data())
    );
    Ok(())
}

fn main() -> llens::Result<()> {
    let world = DiscreteWorld::random(3, 3, &mut stream(4, "world"))?;
    run("random", &world)?;
    let copy_first_bit = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let stuck = DiscreteWorld::over_all_vectors(2, vec![0.1, 0.2, 0.3, 0.4], copy_first_bit)?;
    run("reducible", &stuck)
}
