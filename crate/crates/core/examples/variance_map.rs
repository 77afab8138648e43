//! Posterior variance over a 20x20 grid of a 2-D latent space, next to a blur
//! score of the decoded mean at each point. Writes the CSV, a heatmap and a
//! contact sheet of decoded digits.
//!
//! cargo run --release --example variance_map [out_dir]

use std::path::{Path, PathBuf};

use llens::data::io::read_json;
use llens::runner::{train, variance_map, ExperimentConfig, GridSpec, VarianceMapConfig};

fn main() -> llens::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let cfg: ExperimentConfig = read_json(&fixtures.join("vae_digits_2d.json"))?;
    let (s, _) = train(&cfg, &fixtures, &out.join(&cfg.name))?;
    println!("trained {} steps, I(x;z) {:.3}", s.steps, s.final_mi.unwrap_or(f64::NAN));

    let vm = VarianceMapConfig {
        name: "variance_map".into(),
        checkpoint: PathBuf::from(&cfg.name).join("checkpoint"),
        grid: GridSpec { lo: -2.5, hi: 2.5, steps: 20 },
        mc_samples: 1000,
        seed: 3,
    };
    let summary = variance_map(&vm, &out, &out.join(&vm.name))?;
    println!(
        "{} of {} grid points defined, spearman(variance, blur) = {:.3}",
        summary.defined_points,
        summary.grid_points,
        summary.spearman_variance_blur.unwrap_or(f64::NAN)
    );
    println!("wrote {}", out.join(&vm.name).display());
    Ok(())
}
