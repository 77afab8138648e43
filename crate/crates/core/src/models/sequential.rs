//! A chain of VAEs where stage `t` decodes from a fresh code `z^(t)` and the
//! previous stage's output.
//!
//! Stage 0 is an ordinary VAE. For `t >= 1` the decoder output is fused with
//! the previous output through a per-pixel gate,
//! `x^(t) = alpha * x^(t-1) + (1 - alpha) * f_t(z^(t), x^(t-1))`.
//! Stages share no parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Mlp};
use super::vae::MlpEncoder;
use crate::autodiff::{concat, Bound, ParamSet, Tape, Tensor, Var};
use crate::distributions::StandardNormalPrior;
use crate::error::{Error, Result};
use crate::objectives::{InferenceModel, Regularizer};

pub const GATE_INIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GateMode {
    /// Per-pixel `alpha`, trained, initialized at 0.5.
    #[default]
    Learnable,
    /// Plain averaging: `alpha` frozen at 0.5.
    Direct,
    /// `alpha` frozen at `value`.
    Fixed { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub encoder: MlpEncoder,
    /// Input is `z` for stage 0 and `[z, x_prev]` afterwards; output is the
    /// pre-sigmoid image.
    pub decoder: Mlp,
    pub gate: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialVae {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub stages: Vec<Stage>,
    pub gate_mode: GateMode,
    /// Let gradients flow from stage `t` into earlier stages.
    pub joint_backprop: bool,
}

/// Per-stage outputs of one training pass.
pub struct SequentialReport<'t> {
    pub total: Var<'t>,
    /// Batch mean of `||x^(t) - x||^2`.
    pub stage_sq_error: Vec<f64>,
    pub stage_regularizer: Vec<f64>,
}

impl SequentialVae {
    pub fn new(
        stages: usize,
        data_dim: usize,
        latent_dim: usize,
        encoder_hidden: &[usize],
        decoder_hidden: &[usize],
        act: Activation,
        gate_mode: GateMode,
    ) -> Result<Self> {
        if stages == 0 {
            return Err(Error::invalid("a sequential model needs at least one stage"));
        }
        if let GateMode::Fixed { value } = gate_mode {
            if !value.is_finite() {
                return Err(Error::invalid("gate value must be finite"));
            }
        }
        let stages = (0..stages)
            .map(|t| {
                let encoder = MlpEncoder::new(&format!("s{t}.enc."), data_dim, encoder_hidden, latent_dim, act)?;
                let input = if t == 0 { latent_dim } else { latent_dim + data_dim };
                let mut sizes = vec![input];
                sizes.extend_from_slice(decoder_hidden);
                sizes.push(data_dim);
                let decoder = Mlp::new(format!("s{t}.dec."), sizes, act)?;
                let gate = (t > 0).then(|| format!("s{t}.gate"));
                Ok(Stage { encoder, decoder, gate })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            data_dim,
            latent_dim,
            stages,
            gate_mode,
            joint_backprop: false,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for stage in &self.stages {
            stage.encoder.init(params, rng);
            stage.decoder.init(params, rng);
            if let Some(g) = &stage.gate {
                let value = match self.gate_mode {
                    GateMode::Learnable | GateMode::Direct => GATE_INIT,
                    GateMode::Fixed { value } => value,
                };
                params.insert(g.clone(), Tensor::full(vec![self.data_dim], value));
                if self.gate_mode != GateMode::Learnable {
                    params.freeze(g);
                }
            }
        }
    }

    /// Output of stage `t` for codes `z` and, for `t >= 1`, the previous output.
    pub fn decode_stage<'t>(
        &self,
        params: &Bound<'t>,
        t: usize,
        z: Var<'t>,
        x_prev: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let stage = self
            .stages
            .get(t)
            .ok_or_else(|| Error::invalid(format!("stage {t} out of range")))?;
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "decode_stage",
                left: zs,
                right: vec![0, self.latent_dim],
            });
        }
        match (&stage.gate, x_prev) {
            (None, _) => stage.decoder.forward(params, z)?.sigmoid(),
            (Some(gate), Some(prev)) => {
                let fresh = stage.decoder.forward(params, concat(&[z, prev], 1)?)?.sigmoid()?;
                let alpha = params.get(gate)?;
                let keep = alpha.neg()?.add_scalar(1.0)?;
                alpha.mul(&prev)?.add(&keep.mul(&fresh)?)
            }
            (Some(_), None) => Err(Error::invalid(format!("stage {t} needs the previous output"))),
        }
    }

    /// Threads codes `zs[t]` through every stage; returns each stage's output.
    pub fn forward_generate(&self, params: &ParamSet, zs: &[Tensor]) -> Result<Vec<Tensor>> {
        if zs.len() != self.num_stages() {
            return Err(Error::invalid(format!(
                "{} code batches for {} stages",
                zs.len(),
                self.num_stages()
            )));
        }
        let tape = Tape::new();
        let b = params.bind(&tape);
        let mut prev: Option<Var> = None;
        let mut outs = Vec::with_capacity(zs.len());
        for (t, z) in zs.iter().enumerate() {
            let out = self.decode_stage(&b, t, tape.constant(z.clone()), prev)?;
            outs.push(out.value());
            prev = Some(out);
        }
        Ok(outs)
    }

    /// Sum over stages of `mean ||x^(t) - x||^2 + R_t(q_t)`, with one
    /// reparameterized code per datum and stage. Earlier outputs enter later
    /// stages detached unless `joint_backprop` is set.
    pub fn loss<'t, R: Rng + ?Sized>(
        &self,
        params: &Bound<'t>,
        batch: &Tensor,
        regs: &[Regularizer],
        rng: &mut R,
    ) -> Result<SequentialReport<'t>> {
        if regs.len() != self.num_stages() {
            return Err(Error::invalid(format!(
                "{} regularizers for {} stages",
                regs.len(),
                self.num_stages()
            )));
        }
        let tape = params.tape()?;
        let x = tape.constant(batch.clone());
        let mut prev: Option<Var> = None;
        let mut total: Option<Var> = None;
        let mut stage_sq_error = Vec::new();
        let mut stage_regularizer = Vec::new();
        for (t, stage) in self.stages.iter().enumerate() {
            let q = stage.encoder.posterior(params, x)?;
            let z = q.reparam_sample(rng)?;
            let out = self.decode_stage(params, t, z, prev)?;
            let sq = out.sub(&x)?.square()?.sum_axis(1)?.mean()?;
            let reg = regs[t].evaluate(&q)?;
            let term = sq.add(&reg)?;
            stage_sq_error.push(sq.item()?);
            stage_regularizer.push(reg.item()?);
            total = Some(match total {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
            prev = Some(if self.joint_backprop { out } else { out.detach() });
        }
        Ok(SequentialReport {
            total: total.expect("at least one stage"),
            stage_sq_error,
            stage_regularizer,
        })
    }

    /// Per-stage mean squared error per pixel, decoding from posterior means.
    pub fn reconstruction_mse(&self, params: &ParamSet, data: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = params.bind(&tape);
        let x = tape.constant(data.clone());
        let mut prev: Option<Var> = None;
        let mut out = Vec::with_capacity(self.num_stages());
        for (t, stage) in self.stages.iter().enumerate() {
            let q = stage.encoder.posterior(&b, x)?;
            let rec = self.decode_stage(&b, t, q.mean, prev)?;
            out.push(rec.sub(&x)?.square()?.mean()?.item()?);
            prev = Some(rec);
        }
        Ok(out)
    }

    /// Samples `count` trajectories: a uniform-noise start followed by each
    /// stage's mean output given prior codes. Returns `T + 1` batches.
    pub fn sample_trajectory<R: Rng + ?Sized>(
        &self,
        params: &ParamSet,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Tensor>> {
        if count == 0 {
            return Err(Error::invalid("count must be positive"));
        }
        let prior = StandardNormalPrior::new(self.latent_dim);
        let zs: Vec<Tensor> = (0..self.num_stages()).map(|_| prior.sample(count, rng)).collect();
        let start = Tensor::uniform(vec![count, self.data_dim], 0.0, 1.0, rng);
        let mut traj = vec![start];
        traj.extend(self.forward_generate(params, &zs)?);
        Ok(traj)
    }
}
