//! An autoregressive decoder on bar patterns, trained on the ELBO and on the
//! unregularized autoencoding loss. The ELBO run can model the data without
//! the code and drops it; the unregularized run keeps it. Gibbs samples from
//! the second model are scored against ancestral samples from the first.
//!
//! cargo run --release --example information_preference

use std::path::{Path, PathBuf};

use llens::data::io::read_json;
use llens::runner::{sample, train, ExperimentConfig, SampleConfig, SampleMode, SampleSpec};

fn draw(base: &Path, run: &str, mode: SampleMode, out: &Path) -> llens::Result<f64> {
    let cfg = SampleConfig {
        name: format!("{run}_{mode:?}"),
        checkpoint: PathBuf::from(run).join("checkpoint"),
        mode,
        seed: 1,
        samples: SampleSpec { count: 256, ..SampleSpec::default() },
    };
    let s = sample(&cfg, base, &out.join(&cfg.name))?;
    Ok(s.kernel_nll_per_pixel.unwrap_or(f64::NAN))
}

fn main() -> llens::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let out = tempfile::tempdir().expect("temp dir");
    for name in ["ar_elbo_patterns", "ar_unreg_patterns"] {
        let cfg: ExperimentConfig = read_json(&fixtures.join(format!("{name}.json")))?;
        let (s, _) = train(&cfg, &fixtures, &out.path().join(name))?;
        println!(
            "{name:<18} I(x;z) {:.3}  KL {:.3}  NLL/pixel {:.4}",
            s.final_mi.unwrap_or(f64::NAN),
            s.final_kl.unwrap_or(f64::NAN),
            s.final_nll.unwrap_or(f64::NAN)
        );
    }
    let gibbs = draw(out.path(), "ar_unreg_patterns", SampleMode::Gibbs, out.path())?;
    let ancestral = draw(out.path(), "ar_elbo_patterns", SampleMode::Ancestral, out.path())?;
    println!("sample NLL/pixel: gibbs (unregularized) {gibbs:.4}, ancestral (ELBO) {ancestral:.4}");
    Ok(())
}
