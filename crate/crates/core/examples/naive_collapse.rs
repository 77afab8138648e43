//! Trains the same decoder on bar patterns twice: once on the naive bound,
//! where codes come from the prior and never see the data, and once on the
//! unregularized autoencoding loss. Prints how much the decoder output moves
//! across prior draws.
//!
//! cargo run --example naive_collapse

use std::path::Path;

use llens::data::io::read_json;
use llens::diagnostics::max_pairwise_distance;
use llens::distributions::StandardNormalPrior;
use llens::models::Model;
use llens::rng::stream;
use llens::runner::{checkpoint_dir, train, ExperimentConfig, LoadedRun};
use llens::samplers::{CodePrior, Decoder, TrainedDecoder};

fn spread(run_dir: &Path) -> llens::Result<f64> {
    let run = LoadedRun::load(&checkpoint_dir(run_dir))?;
    let Model::Vae(m) = &run.model else { unreachable!() };
    let mut rng = stream(0, "spread");
    let z = StandardNormalPrior::new(m.latent_dim()).sample_codes(64, &mut rng)?;
    let probs = TrainedDecoder::new(&m.decoder, &run.params).decode(&z, true, &mut rng)?;
    Ok(max_pairwise_distance(&probs))
}

fn main() -> llens::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let out = tempfile::tempdir().expect("temp dir");
    for name in ["naive_patterns", "unreg_patterns"] {
        let cfg: ExperimentConfig = read_json(&fixtures.join(format!("{name}.json")))?;
        let dir = out.path().join(name);
        let (summary, _) = train(&cfg, &fixtures, &dir)?;
        println!(
            "{name:>16}: {} steps, decoder spread over 64 prior codes {:.3e}",
            summary.steps,
            spread(&dir)?
        );
    }
    Ok(())
}
