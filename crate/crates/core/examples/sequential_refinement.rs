//! A four-stage sequential VAE on binarized 8x8 digits. Each stage sees the
//! previous reconstruction and a fresh code; the per-stage reconstruction
//! error should fall from stage to stage. Sample trajectories are written as
//! PGM contact sheets.
//!
//! cargo run --release --example sequential_refinement [out_dir]

use std::path::{Path, PathBuf};

use llens::data::io::read_json;
use llens::runner::{train, ExperimentConfig};

fn main() -> llens::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let cfg: ExperimentConfig = read_json(&fixtures.join("sequential_digits.json"))?;
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let dir = out.join(&cfg.name);
    let (s, _) = train(&cfg, &fixtures, &dir)?;
    for (t, mse) in s.final_stage_mse.unwrap_or_default().iter().enumerate() {
        println!("stage {t}: per-pixel MSE {mse:.4}");
    }
    println!("samples under {}", dir.join("samples").display());
    Ok(())
}
