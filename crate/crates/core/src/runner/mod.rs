//! The `llens` command line: JSON experiment configs in, metrics, checkpoints,
//! images and reports out.
//!
//! Exit codes: 0 on success, 2 for usage, config and data errors, 3 when a
//! computation produces non-finite values or training diverges.

mod commands;
pub mod config;
mod emit;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

pub use commands::{
    checkpoint_dir, gibbs_from_run, mi_sweep, sample, train, variance_map, LoadedRun, MiRow, SampleSummary, TrainSummary,
    VarianceMapSummary,
};
pub use config::{
    DatasetSpec, ExperimentConfig, GridSpec, MiSweepConfig, SampleConfig, SampleMode, SampleSpec, VarianceMapConfig,
};
pub use verify::{random_worlds, verify_world, verify_worlds, Check, Status, VerifyReport, WorldReport};

use crate::data::io::{parse_json, write_json};
use crate::error::{Error, Result};
use crate::oracle::DiscreteWorld;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "LLENS_OUT";

#[derive(Debug, Parser)]
#[command(name = "llens", version, about = "Train, sample and verify generalized VAE objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config for the command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root; a run writes into `<root>/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from an experiment config.
    Train(CommonArgs),
    /// Draw samples from a trained checkpoint.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
    },
    /// Check every exact identity on a world file or on random worlds.
    OracleVerify {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random worlds to generate instead of reading --config.
        #[arg(long)]
        random: Option<usize>,
    },
    /// Mutual-information estimates over sample sizes and seeds.
    MiSweep(CommonArgs),
    /// Posterior-variance map over a 2-D latent grid.
    VarianceMap(CommonArgs),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } | Error::Domain { .. } | Error::NonDeterministic(_) => {
            EXIT_NUMERICAL
        }
        _ => EXIT_USAGE,
    }
}

/// `--out` if given, else `$LLENS_OUT`, else `runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    match (flag, std::env::var_os(OUT_ENV)) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(env)) if !env.is_empty() => PathBuf::from(env),
        _ => PathBuf::from("runs"),
    }
}

fn read_config<T: DeserializeOwned>(path: Option<&Path>) -> Result<(T, PathBuf)> {
    let path = path.ok_or_else(|| Error::invalid("--config is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_json(&text)?, base))
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::Config {
            path: "name".into(),
            message: format!("`{name}` is not a valid run name"),
        });
    }
    Ok(())
}

/// Runs one parsed command, returning a one-line summary for stdout.
pub fn run(cmd: Command) -> Result<String> {
    match cmd {
        Command::Train(args) => {
            let (mut cfg, base): (ExperimentConfig, _) = read_config(args.config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            validate_name(&cfg.name)?;
            let out = output_root(args.out.as_deref()).join(&cfg.name);
            let (s, _) = train(&cfg, &base, &out)?;
            Ok(format!(
                "trained {} steps -> {} (mi {:?}, kl {:?}, nll {:?})",
                s.steps,
                out.display(),
                s.final_mi,
                s.final_kl,
                s.final_nll
            ))
        }
        Command::Sample { common, burn_in, thin } => {
            let (mut cfg, base): (SampleConfig, _) = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(b) = burn_in {
                cfg.samples.burn_in = b;
            }
            if let Some(t) = thin {
                cfg.samples.thin = t;
            }
            validate_name(&cfg.name)?;
            let out = output_root(common.out.as_deref()).join(&cfg.name);
            let s = sample(&cfg, &base, &out)?;
            Ok(format!("{} {:?} samples -> {}", s.count, s.mode, out.display()))
        }
        Command::OracleVerify { common, random } => {
            let seed = common.seed.unwrap_or(0);
            let (worlds, name) = match (random, common.config.as_deref()) {
                (Some(_), Some(_)) => return Err(Error::invalid("use either --random or --config, not both")),
                (Some(n), None) => (random_worlds(n, seed)?, "oracle_verify".to_string()),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let stem = path.file_stem().map_or("world".into(), |s| s.to_string_lossy().into_owned());
                    (vec![DiscreteWorld::from_json(&text)?], format!("oracle_verify_{stem}"))
                }
                (None, None) => return Err(Error::invalid("oracle-verify needs --random N or --config WORLD")),
            };
            let report = verify_worlds(&worlds, seed)?;
            let out = output_root(common.out.as_deref()).join(name);
            write_json(&out.join("report.json"), &report)?;
            let line = format!(
                "{} worlds: {} passed, {} failed, {} skipped -> {}",
                report.worlds,
                report.checks_passed,
                report.checks_failed,
                report.checks_skipped,
                out.display()
            );
            if report.passed {
                Ok(line)
            } else {
                Err(Error::Domain { op: "oracle-verify", detail: line })
            }
        }
        Command::MiSweep(args) => {
            let (mut cfg, base): (MiSweepConfig, _) = read_config(args.config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seeds = vec![s];
            }
            validate_name(&cfg.name)?;
            let out = output_root(args.out.as_deref()).join(&cfg.name);
            let rows = mi_sweep(&cfg, &base, &out)?;
            Ok(format!("{} estimates -> {}", rows.len(), out.display()))
        }
        Command::VarianceMap(args) => {
            let (mut cfg, base): (VarianceMapConfig, _) = read_config(args.config.as_deref())?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            validate_name(&cfg.name)?;
            let out = output_root(args.out.as_deref()).join(&cfg.name);
            let s = variance_map(&cfg, &base, &out)?;
            Ok(format!(
                "{} of {} grid points defined, spearman {:?} -> {}",
                s.defined_points,
                s.grid_points,
                s.spearman_variance_blur,
                out.display()
            ))
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
