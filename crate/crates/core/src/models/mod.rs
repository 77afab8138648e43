//! Encoder/decoder networks, the sequential chain, training loops and
//! checkpoints.

mod checkpoint;
pub mod layers;
pub mod made;
pub mod sequential;
pub mod train;
pub mod vae;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{Activation, Mlp};
pub use made::Made;
pub use sequential::{GateMode, SequentialVae, GATE_INIT};
pub use train::{
    fit, sequential_train, vae_train, window_monotone_fraction, EvalSpec, MetricsRecord, ObjectiveSpec,
    OptimizerSpec, StepOutput, TrainConfig, TrainOutcome,
};
pub use vae::{MeanLink, MlpDecoder, MlpEncoder, VaeModel};

use crate::autodiff::ParamSet;
use crate::distributions::Family;
use crate::error::{Error, Result};

fn default_latent() -> usize {
    2
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_made_hidden() -> usize {
    64
}

fn default_stages() -> usize {
    1
}

/// Architecture description, as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub decoder_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub mean_link: MeanLink,
    #[serde(default = "default_made_hidden")]
    pub made_hidden: usize,
    /// Build a stage chain instead of a single VAE.
    #[serde(default)]
    pub sequential: bool,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default)]
    pub gate: GateMode,
    #[serde(default)]
    pub joint_backprop: bool,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            latent_dim: default_latent(),
            encoder_hidden: default_hidden(),
            decoder_hidden: default_hidden(),
            activation: Activation::default(),
            mean_link: MeanLink::default(),
            made_hidden: default_made_hidden(),
            sequential: false,
            stages: default_stages(),
            gate: GateMode::default(),
            joint_backprop: false,
        }
    }

    pub fn build(&self, data_dim: usize) -> Result<Model> {
        if data_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("data and latent dimensions must be positive"));
        }
        if self.sequential {
            if self.family != Family::GaussianFixedVariance {
                return Err(Error::invalid("sequential models use the squared-error (gaussian) family"));
            }
            let mut m = SequentialVae::new(
                self.stages,
                data_dim,
                self.latent_dim,
                &self.encoder_hidden,
                &self.decoder_hidden,
                self.activation,
                self.gate,
            )?;
            m.joint_backprop = self.joint_backprop;
            return Ok(Model::Sequential(m));
        }
        let enc = MlpEncoder::new("enc.", data_dim, &self.encoder_hidden, self.latent_dim, self.activation)?;
        let dec = MlpDecoder::new(
            "dec.",
            self.family,
            self.latent_dim,
            &self.decoder_hidden,
            data_dim,
            self.activation,
            self.mean_link,
            self.made_hidden,
        )?;
        Ok(Model::Vae(VaeModel::new(enc, dec)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Vae(VaeModel),
    Sequential(SequentialVae),
}

impl Model {
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        match self {
            Model::Vae(m) => m.init(params, rng),
            Model::Sequential(m) => m.init(params, rng),
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Model::Vae(m) => m.data_dim(),
            Model::Sequential(m) => m.data_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Model::Vae(m) => m.latent_dim(),
            Model::Sequential(m) => m.latent_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_from_json() {
        let spec: ModelSpec = serde_json::from_str(r#"{"family": "factorized_bernoulli"}"#).unwrap();
        assert_eq!(spec, ModelSpec::new(Family::FactorizedBernoulli));
        assert!(serde_json::from_str::<ModelSpec>(r#"{"family": "factorized_bernoulli", "layers": 3}"#).is_err());
    }

    #[test]
    fn sequential_requires_squared_error() {
        let mut spec = ModelSpec::new(Family::FactorizedBernoulli);
        spec.sequential = true;
        assert!(spec.build(4).is_err());
        spec.family = Family::GaussianFixedVariance;
        spec.stages = 3;
        match spec.build(4).unwrap() {
            Model::Sequential(m) => assert_eq!(m.num_stages(), 3),
            Model::Vae(_) => panic!("expected a chain"),
        }
    }
}
