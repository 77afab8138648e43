use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, downsample_binarize, synth_binary_patterns, synth_mixture_2d, Dataset};
use crate::error::{Error, Result};
use crate::models::{EvalSpec, ModelSpec, ObjectiveSpec, OptimizerSpec};
use crate::rng::child_seed;
use crate::samplers::ChainInit;

fn one() -> usize {
    1
}

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// The bundled 8x8 handwritten digits.
    Digits {
        #[serde(default = "one")]
        factor: usize,
        /// Binarize at this level after pooling.
        #[serde(default)]
        threshold: Option<f64>,
        #[serde(default)]
        limit: Option<usize>,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default = "one")]
        factor: usize,
        #[serde(default)]
        threshold: Option<f64>,
        #[serde(default)]
        limit: Option<usize>,
    },
    BinaryPatterns {
        patterns: Vec<Vec<u8>>,
        weights: Vec<f64>,
        n: usize,
    },
    Mixture2d {
        means: Vec<[f64; 2]>,
        stds: Vec<f64>,
        weights: Vec<f64>,
        n: usize,
    },
}

fn preprocess(ds: Dataset, factor: usize, threshold: Option<f64>, limit: Option<usize>) -> Result<Dataset> {
    let ds = match threshold {
        Some(t) => downsample_binarize(&ds, factor, t)?,
        None if factor == 1 => ds,
        None => return Err(Error::invalid("downsampling requires a binarization threshold")),
    };
    Ok(match limit {
        Some(n) => ds.take(n),
        None => ds,
    })
}

impl DatasetSpec {
    /// Builds the dataset; relative paths are taken from `base`. Synthetic
    /// sets draw from the `data` stream of `seed`.
    pub fn load(&self, base: &Path, seed: u64) -> Result<Dataset> {
        let data_seed = child_seed(seed, "data");
        match self {
            DatasetSpec::Digits { factor, threshold, limit } => {
                preprocess(data::bundled_digits(), *factor, *threshold, *limit)
            }
            DatasetSpec::Idx { images, labels, factor, threshold, limit } => {
                let labels = labels.as_ref().map(|l| base.join(l));
                let ds = data::load_idx(&base.join(images), labels.as_deref())?;
                preprocess(ds, *factor, *threshold, *limit)
            }
            DatasetSpec::BinaryPatterns { patterns, weights, n } => {
                let dims = patterns.first().map_or(0, Vec::len);
                synth_binary_patterns(dims, patterns, weights, *n, data_seed)
            }
            DatasetSpec::Mixture2d { means, stds, weights, n } => {
                synth_mixture_2d(means.len(), means, stds, weights, *n, data_seed)
            }
        }
    }
}

fn default_sample_count() -> usize {
    64
}

fn default_chains() -> usize {
    16
}

/// Samples drawn at the end of a training run and by `sample`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    #[serde(default = "default_sample_count")]
    pub count: usize,
    /// Emit decoder means instead of draws (ancestral mode).
    #[serde(default)]
    pub mean_mode: bool,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "crate::samplers::default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "crate::samplers::default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub init: ChainInit,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            count: default_sample_count(),
            mean_mode: false,
            chains: default_chains(),
            burn_in: crate::samplers::DEFAULT_BURN_IN,
            thin: crate::samplers::DEFAULT_THIN,
            init: ChainInit::Ancestral,
        }
    }
}

fn default_name() -> String {
    "run".into()
}

/// A complete training experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub samples: SampleSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Error::Config {
            path: path.into(),
            message: message.into(),
        };
        if self.epochs == 0 {
            return Err(bad("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive"));
        }
        if self.model.sequential && !matches!(self.objective, ObjectiveSpec::L2 { .. }) {
            return Err(bad("objective.kind", "sequential models train on the l2 objective"));
        }
        if self.model.family != crate::distributions::Family::GaussianFixedVariance
            && matches!(self.objective, ObjectiveSpec::L2 { .. })
        {
            return Err(bad("objective.kind", "the l2 objective needs the gaussian_fixed_variance family"));
        }
        if let Some(r) = self.objective.regularizer() {
            r.validate().map_err(|e| bad("objective.regularizer.weight", &e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Ancestral,
    Gibbs,
    Sequential,
}

/// Input to `sample`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "default_sample_name")]
    pub name: String,
    pub checkpoint: PathBuf,
    pub mode: SampleMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub samples: SampleSpec,
}

fn default_sample_name() -> String {
    "samples".into()
}

fn default_m_values() -> Vec<usize> {
    vec![16, 256, 4096]
}

/// Input to `mi-sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiSweepConfig {
    #[serde(default = "default_mi_name")]
    pub name: String,
    pub checkpoint: PathBuf,
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

fn default_mi_name() -> String {
    "mi_sweep".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: -2.5, hi: 2.5, steps: 20 }
    }
}

fn default_mc() -> usize {
    1000
}

/// Input to `variance-map`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceMapConfig {
    #[serde(default = "default_vm_name")]
    pub name: String,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_vm_name() -> String {
    "variance_map".into()
}
