//! The minibatch mutual-information estimator on a world whose true `I(x; z)`
//! is known exactly. Sixteen equiprobable states fall into four groups and
//! the code names the group with probability `1 - eps`. The estimate can
//! never exceed `log M`, which caps it for small `M`.
//!
//! cargo run --release --example mi_estimator

use llens::autodiff::Tensor;
use llens::diagnostics::mi_estimate;
use llens::oracle::{mutual_information, DiscreteWorld};
use llens::rng::stream;
use llens::samplers::WorldEncoder;
use rand::Rng;

fn grouped(eps: f64) -> llens::Result<DiscreteWorld> {
    let q = (0..16).map(|x| (0..4).map(|z| if z == x / 4 { 1.0 - eps } else { eps / 3.0 }).collect()).collect();
    DiscreteWorld::over_all_vectors(4, vec![1.0 / 16.0; 16], q)
}

fn main() -> llens::Result<()> {
    for eps in [0.0, 0.1, 0.3] {
        let world = grouped(eps)?;
        let encoder = WorldEncoder::new(&world)?;
        println!("eps {eps:.1}: exact I = {:.4}", mutual_information(&world));
        for m in [4usize, 16, 256, 4096] {
            let mut rng = stream(m as u64, "rows");
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| world.states()[rng.random_range(0..16)].iter().map(|&b| f64::from(b)).collect())
                .collect();
            let est = mi_estimate(&encoder, &Tensor::from_rows(&rows)?, &mut rng)?;
            println!("  M = {m:>4}: {:.4} +- {:.4}  (log M = {:.4})", est.value, est.std_error, est.upper_bound);
        }
    }
    Ok(())
}
