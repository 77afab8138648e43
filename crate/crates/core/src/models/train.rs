//! Minibatch training loops and the metric stream they emit.

use serde::{Deserialize, Serialize};

use super::sequential::SequentialVae;
use super::vae::VaeModel;
use crate::autodiff::{Adam, AdamConfig, Bound, Optimizer, ParamSet, Sgd, Tape, Tensor, Var};
use crate::data::Dataset;
use crate::diagnostics::{kl_posterior_prior, mi_estimate, per_pixel_nll, sample_rows, EncoderView};
use crate::distributions::StandardNormalPrior;
use crate::error::{Error, Result};
use crate::objectives::{l2_reconstruction_loss, naive_bound_loss, vae_loss, InferenceModel, Regularizer};
use crate::rng::{stream, Rng};

/// One row of a metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub metric_name: String,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Adam(AdamConfig),
    Sgd { lr: f64 },
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam(AdamConfig::with_lr(1e-3))
    }
}

impl OptimizerSpec {
    pub fn build(&self) -> Result<Box<dyn Optimizer>> {
        match *self {
            OptimizerSpec::Adam(cfg) => {
                if !(cfg.lr > 0.0) || cfg.decay.is_some_and(|d| !(d.final_lr > 0.0)) {
                    return Err(Error::invalid("learning rate must be positive"));
                }
                Ok(Box::new(Adam::new(cfg)))
            }
            OptimizerSpec::Sgd { lr } => {
                if !(lr > 0.0) {
                    return Err(Error::invalid("learning rate must be positive"));
                }
                Ok(Box::new(Sgd { lr }))
            }
        }
    }
}

/// What a VAE is trained to minimize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `-E_q[log p(x|z)] + R(q)`.
    Vae { regularizer: Regularizer },
    /// `-E_{p(z)}[log p(x|z)]`, codes never see the data.
    NaiveBound {
        #[serde(default = "default_prior_samples")]
        samples_per_datum: usize,
    },
    /// `E_q ||g(z) - x||^2 + R(q)`.
    L2 { regularizer: Regularizer },
}

fn default_prior_samples() -> usize {
    8
}

impl ObjectiveSpec {
    pub fn regularizer(&self) -> Option<Regularizer> {
        match *self {
            ObjectiveSpec::Vae { regularizer } | ObjectiveSpec::L2 { regularizer } => Some(regularizer),
            ObjectiveSpec::NaiveBound { .. } => None,
        }
    }
}

fn default_eval_items() -> usize {
    256
}

fn default_mi_samples() -> usize {
    256
}

fn default_eval_every() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Items in the fixed evaluation subset.
    #[serde(default = "default_eval_items")]
    pub items: usize,
    /// `M` for the mutual-information estimate.
    #[serde(default = "default_mi_samples")]
    pub mi_samples: usize,
    /// Evaluate every this many epochs (the last epoch always).
    #[serde(default = "default_eval_every")]
    pub every: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            items: default_eval_items(),
            mi_samples: default_mi_samples(),
            every: default_eval_every(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
    pub eval: EvalSpec,
}

/// Loss and named scalars from one minibatch.
pub struct StepOutput<'t> {
    pub total: Var<'t>,
    pub scalars: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub steps: usize,
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    /// Last logged value of a metric.
    pub fn last(&self, name: &str) -> Option<f64> {
        self.metrics.iter().rev().find(|r| r.metric_name == name).map(|r| r.value)
    }
}

/// Fraction of consecutive `window`-step blocks whose mean loss does not
/// exceed the previous block's.
pub fn window_monotone_fraction(losses: &[f64], window: usize) -> Option<f64> {
    if window == 0 {
        return None;
    }
    let means: Vec<f64> = losses
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    if means.len() < 2 {
        return None;
    }
    let ok = means.windows(2).filter(|w| w[1] <= w[0]).count();
    Some(ok as f64 / (means.len() - 1) as f64)
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::Domain { .. })
}

/// Generic minibatch loop.
///
/// `step` builds the loss for one batch; `evaluate` returns extra metrics at
/// evaluation epochs. Shuffling, per-step noise and evaluation draw from
/// separate named streams of `cfg.seed`. On a non-finite loss the parameters
/// are restored to their last finite state and [`Error::Diverged`] is
/// returned.
pub fn fit<S, E>(
    dataset: &Dataset,
    params: &mut ParamSet,
    cfg: &TrainConfig,
    mut step: S,
    mut evaluate: E,
) -> Result<TrainOutcome>
where
    S: for<'t> FnMut(&Bound<'t>, &Tensor, &mut Rng) -> Result<StepOutput<'t>>,
    E: FnMut(&ParamSet, &mut Rng) -> Result<Vec<(String, f64)>>,
{
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    let mut optimizer = cfg.optimizer.build()?;
    let mut shuffle = stream(cfg.seed, "shuffle");
    let mut noise = stream(cfg.seed, "noise");
    let mut out = TrainOutcome::default();
    for epoch in 0..cfg.epochs {
        let mut sums: Vec<(String, f64)> = Vec::new();
        let batches = dataset.epoch_batches(cfg.batch_size, &mut shuffle)?;
        for idx in &batches {
            let batch = dataset.batch(idx)?;
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let diverged = |detail: String| Error::Diverged {
                step: out.steps,
                detail,
            };
            let report = match step(&bound, &batch, &mut noise) {
                Ok(r) => r,
                Err(e) if is_numerical(&e) => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            let loss = report.total.item()?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss = {loss}")));
            }
            let grads = match tape.backward(report.total) {
                Ok(g) => bound.grads(&g),
                Err(e) if is_numerical(&e) => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            let last_good = params.clone();
            optimizer.step(params, &grads)?;
            if params.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
                *params = last_good;
                return Err(diverged("parameter update produced non-finite values".into()));
            }
            out.steps += 1;
            out.step_losses.push(loss);
            for (k, v) in std::iter::once(("loss".to_string(), loss)).chain(report.scalars) {
                match sums.iter_mut().find(|(name, _)| *name == k) {
                    Some(entry) => entry.1 += v,
                    None => sums.push((k, v)),
                }
            }
        }
        let nb = batches.len() as f64;
        for (k, v) in sums {
            out.metrics.push(MetricsRecord {
                step: out.steps,
                metric_name: format!("train/{k}"),
                value: v / nb,
            });
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.eval.every > 0 && (epoch + 1) % cfg.eval.every == 0) {
            let mut eval_rng = stream(cfg.seed, &format!("eval/{epoch}"));
            for (k, v) in evaluate(params, &mut eval_rng)? {
                out.metrics.push(MetricsRecord {
                    step: out.steps,
                    metric_name: k,
                    value: v,
                });
            }
        }
    }
    Ok(out)
}

/// Fixed evaluation subset: the first `n` items of a seeded permutation.
fn eval_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Tensor> {
    let mut rng = stream(seed, "eval-subset");
    let order = dataset.epoch_batches(dataset.len(), &mut rng)?;
    let idx: Vec<usize> = order[0].iter().take(n.max(1)).copied().collect();
    dataset.batch(&idx)
}

/// Mutual information, KL to the prior and per-pixel NLL of a VAE.
pub fn evaluate_vae(
    model: &VaeModel,
    params: &ParamSet,
    dataset: &Dataset,
    eval_batch: &Tensor,
    mi_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<(String, f64)>> {
    let view = EncoderView::new(&model.encoder, params);
    let xs = sample_rows(dataset, mi_samples.max(2), rng)?;
    let mi = mi_estimate(&view, &xs, rng)?;
    let kl = kl_posterior_prior(&model.encoder, params, eval_batch)?;
    let z = {
        let tape = Tape::new();
        let b = params.bind(&tape);
        model.encoder.posterior(&b, tape.constant(eval_batch.clone()))?.sample(rng)
    };
    let nll = per_pixel_nll(&model.decoder, params, &z, eval_batch)?;
    Ok(vec![
        ("mi".into(), mi.value),
        ("mi_std_error".into(), mi.std_error),
        ("kl".into(), kl),
        ("nll_per_pixel".into(), nll),
    ])
}

/// Minibatch Adam (or SGD) on the chosen objective.
pub fn vae_train(
    dataset: &Dataset,
    model: &VaeModel,
    params: &mut ParamSet,
    objective: &ObjectiveSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.dim() != model.data_dim() {
        return Err(Error::invalid(format!(
            "dataset has dimension {} but the model expects {}",
            dataset.dim(),
            model.data_dim()
        )));
    }
    if let Some(r) = objective.regularizer() {
        r.validate()?;
    }
    let prior = StandardNormalPrior::new(model.latent_dim());
    let eval_batch = eval_subset(dataset, cfg.eval.items, cfg.seed)?;
    let objective = *objective;
    fit(
        dataset,
        params,
        cfg,
        |b, batch, rng| match objective {
            ObjectiveSpec::Vae { regularizer } => {
                let r = vae_loss(b, batch, &model.encoder, &model.decoder, &regularizer, rng)?;
                Ok(StepOutput {
                    total: r.total,
                    scalars: vec![
                        ("reconstruction".into(), r.reconstruction),
                        ("regularizer".into(), r.regularizer),
                    ],
                })
            }
            ObjectiveSpec::NaiveBound { samples_per_datum } => {
                let total = naive_bound_loss(b, batch, &prior, &model.decoder, samples_per_datum, rng)?;
                Ok(StepOutput { total, scalars: vec![] })
            }
            ObjectiveSpec::L2 { regularizer } => {
                let r = l2_reconstruction_loss(b, batch, &model.encoder, &model.decoder, &regularizer, rng)?;
                Ok(StepOutput {
                    total: r.total,
                    scalars: vec![
                        ("reconstruction".into(), r.reconstruction),
                        ("regularizer".into(), r.regularizer),
                    ],
                })
            }
        },
        |p, rng| evaluate_vae(model, p, dataset, &eval_batch, cfg.eval.mi_samples, rng),
    )
}

/// Trains every stage of a sequential chain on its own squared-error
/// objective. `regs` holds one regularizer per stage.
pub fn sequential_train(
    dataset: &Dataset,
    model: &SequentialVae,
    params: &mut ParamSet,
    regs: &[Regularizer],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.dim() != model.data_dim {
        return Err(Error::invalid(format!(
            "dataset has dimension {} but the model expects {}",
            dataset.dim(),
            model.data_dim
        )));
    }
    for r in regs {
        r.validate()?;
    }
    let eval_batch = eval_subset(dataset, cfg.eval.items, cfg.seed)?;
    fit(
        dataset,
        params,
        cfg,
        |b, batch, rng| {
            let r = model.loss(b, batch, regs, rng)?;
            let mut scalars = Vec::new();
            for (t, (sq, reg)) in r.stage_sq_error.iter().zip(&r.stage_regularizer).enumerate() {
                scalars.push((format!("stage{t}/sq_error"), *sq));
                scalars.push((format!("stage{t}/regularizer"), *reg));
            }
            Ok(StepOutput { total: r.total, scalars })
        },
        |p, _| {
            Ok(model
                .reconstruction_mse(p, &eval_batch)?
                .into_iter()
                .enumerate()
                .map(|(t, v)| (format!("stage{t}/mse"), v))
                .collect())
        },
    )
}
