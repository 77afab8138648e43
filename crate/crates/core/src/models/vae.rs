use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Mlp};
use super::made::Made;
use crate::autodiff::{Bound, ParamSet, Tape, Tensor, Var};
use crate::distributions::{
    AutoregressiveBernoulli, DiagonalGaussian, Family, FactorizedBernoulli, GaussianFixedVariance,
};
use crate::error::{Error, Result};
use crate::objectives::{ConditionalDecoder, InferenceModel, MeanDecoder};

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `q(z|x) = N(mu(x), diag(exp(s(x))^2))` from one MLP with a `2d` head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpEncoder {
    pub net: Mlp,
    pub latent_dim: usize,
}

impl MlpEncoder {
    pub fn new(prefix: &str, data_dim: usize, hidden: &[usize], latent_dim: usize, act: Activation) -> Result<Self> {
        let mut sizes = vec![data_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * latent_dim);
        Ok(Self {
            net: Mlp::new(prefix, sizes, act)?,
            latent_dim,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.net.init(params, rng);
    }
}

impl InferenceModel for MlpEncoder {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn posterior<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<DiagonalGaussian<'t>> {
        let d = self.latent_dim;
        let out = self.net.forward(params, x)?;
        let mean = out.slice(1, 0, d)?;
        let log_std = out.slice(1, d, 2 * d)?.clamp(LOG_STD_MIN, LOG_STD_MAX)?;
        DiagonalGaussian::new(mean, log_std)
    }
}

/// How a fixed-variance Gaussian decoder maps the net output to its mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLink {
    /// Identity; for unbounded data.
    Linear,
    /// Logistic; for data in `[0, 1]`.
    #[default]
    Sigmoid,
}

/// `p(x|z)` in one of the decoder families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpDecoder {
    pub family: Family,
    pub latent_dim: usize,
    pub data_dim: usize,
    /// Maps `z` to the family parameters (for the autoregressive family, to a
    /// per-pixel bias added to the masked network's logits).
    pub net: Mlp,
    pub link: MeanLink,
    pub made: Option<Made>,
}

impl MlpDecoder {
    pub fn new(
        prefix: &str,
        family: Family,
        latent_dim: usize,
        hidden: &[usize],
        data_dim: usize,
        act: Activation,
        link: MeanLink,
        made_hidden: usize,
    ) -> Result<Self> {
        let mut sizes = vec![latent_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(data_dim);
        let made = match family {
            Family::AutoregressiveBernoulli => {
                Some(Made::new(format!("{prefix}made."), data_dim, made_hidden, latent_dim)?)
            }
            _ => None,
        };
        Ok(Self {
            family,
            latent_dim,
            data_dim,
            net: Mlp::new(prefix, sizes, act)?,
            link,
            made,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.net.init(params, rng);
        if let Some(made) = &self.made {
            made.init(params, rng);
        }
    }

    fn check_latent(&self, z: &Var<'_>) -> Result<()> {
        let shape = z.shape();
        if shape.len() != 2 || shape[1] != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "decoder",
                left: shape,
                right: vec![0, self.latent_dim],
            });
        }
        Ok(())
    }

    /// Family parameters `lambda = f(z)`: the Gaussian mean or the Bernoulli
    /// probabilities. Undefined for the autoregressive family, whose
    /// parameters also depend on `x`.
    pub fn output_params<'t>(&self, params: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.check_latent(&z)?;
        let raw = self.net.forward(params, z)?;
        match (self.family, self.link) {
            (Family::GaussianFixedVariance, MeanLink::Linear) => Ok(raw),
            (Family::GaussianFixedVariance, MeanLink::Sigmoid) => raw.sigmoid(),
            (Family::FactorizedBernoulli, _) => raw.sigmoid(),
            (Family::AutoregressiveBernoulli, _) => Err(Error::invalid(
                "autoregressive decoder parameters depend on x; use log_likelihood or sample",
            )),
        }
    }

    fn logits_for<'t>(&self, params: &Bound<'t>, z: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let bias = self.net.forward(params, z)?;
        match &self.made {
            Some(made) => made.logits(params, x, z)?.add(&bias),
            None => Ok(bias),
        }
    }

    /// One draw `x ~ p(x|z)` per row of `z`, or the mean when `mean_mode`.
    /// Autoregressive means are not available; `mean_mode` then returns a
    /// greedy (argmax per pixel) decode.
    pub fn sample<'t, R: Rng + ?Sized>(
        &self,
        params: &Bound<'t>,
        z: Var<'t>,
        mean_mode: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.check_latent(&z)?;
        match self.family {
            Family::GaussianFixedVariance => {
                let mean = self.output_params(params, z)?;
                if mean_mode {
                    Ok(mean.value())
                } else {
                    Ok(GaussianFixedVariance::new(mean).sample(rng))
                }
            }
            Family::FactorizedBernoulli => {
                let logits = self.net.forward(params, z)?;
                let dist = FactorizedBernoulli::new(logits);
                if mean_mode {
                    Ok(dist.probs())
                } else {
                    Ok(dist.sample(rng))
                }
            }
            Family::AutoregressiveBernoulli => {
                let tape = params.tape()?;
                let rows = z.shape()[0];
                let n = self.data_dim;
                let mut x = Tensor::zeros(vec![rows, n]);
                for i in 0..n {
                    let logits = self.logits_for(params, z, tape.constant(x.clone()))?.value();
                    for b in 0..rows {
                        let l = logits.data()[b * n + i];
                        let v = if mean_mode {
                            l > 0.0
                        } else {
                            rng.random::<f64>() < crate::autodiff::sigmoid(l)
                        };
                        x.data_mut()[b * n + i] = f64::from(u8::from(v));
                    }
                }
                Ok(x)
            }
        }
    }
}

impl ConditionalDecoder for MlpDecoder {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn log_likelihood<'t>(&self, params: &Bound<'t>, z: Var<'t>, x: &Tensor) -> Result<Var<'t>> {
        self.check_latent(&z)?;
        match self.family {
            Family::GaussianFixedVariance => {
                GaussianFixedVariance::new(self.output_params(params, z)?).log_prob(x)
            }
            Family::FactorizedBernoulli => {
                FactorizedBernoulli::new(self.net.forward(params, z)?).log_prob(x)
            }
            Family::AutoregressiveBernoulli => {
                let tape = params.tape()?;
                let xv = tape.constant(x.clone());
                let bias = self.net.forward(params, z)?;
                let made = self.made.as_ref().expect("autoregressive decoder has a made");
                AutoregressiveBernoulli::new(BiasedMade {
                    made,
                    params,
                    z,
                    bias,
                })
                .log_prob(xv)
            }
        }
    }
}

impl MeanDecoder for MlpDecoder {
    fn mean<'t>(&self, params: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.output_params(params, z)
    }
}

struct BiasedMade<'a, 't> {
    made: &'a Made,
    params: &'a Bound<'t>,
    z: Var<'t>,
    bias: Var<'t>,
}

impl<'t> crate::distributions::AutoregressiveLogits<'t> for BiasedMade<'_, 't> {
    fn dim(&self) -> usize {
        self.made.data_dim
    }

    fn logits(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.made.logits(self.params, x, self.z)?.add(&self.bias)
    }
}

/// An encoder/decoder pair sharing one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub encoder: MlpEncoder,
    pub decoder: MlpDecoder,
}

impl VaeModel {
    pub fn new(encoder: MlpEncoder, decoder: MlpDecoder) -> Result<Self> {
        if encoder.latent_dim != decoder.latent_dim || encoder.data_dim() != decoder.data_dim {
            return Err(Error::invalid(format!(
                "encoder {}->{} does not match decoder {}->{}",
                encoder.data_dim(),
                encoder.latent_dim,
                decoder.latent_dim,
                decoder.data_dim
            )));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.data_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.encoder.init(params, rng);
        self.decoder.init(params, rng);
    }

    /// Decoded family parameters for a batch of codes, off-tape.
    pub fn forward_generate(&self, params: &ParamSet, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let b = params.bind(&tape);
        Ok(self.decoder.output_params(&b, tape.constant(z.clone()))?.value())
    }

    /// Posterior means and log standard deviations for a batch, off-tape.
    pub fn encode(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let b = params.bind(&tape);
        let q = self.encoder.posterior(&b, tape.constant(x.clone()))?;
        Ok((q.mean.value(), q.log_std.value()))
    }
}
