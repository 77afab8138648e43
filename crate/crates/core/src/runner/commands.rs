use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{
    DatasetSpec, ExperimentConfig, MiSweepConfig, SampleConfig, SampleMode, SampleSpec, VarianceMapConfig,
};
use super::emit::{emit_samples, fmt, fmt_opt};
use crate::autodiff::{ParamSet, Tensor};
use crate::data::io::{normalize_unit, read_json, write_csv, write_csv_records, write_json, write_pgm};
use crate::data::{io::contact_sheet, Dataset, Dims};
use crate::diagnostics::{
    blur_proxy, latent_grid, mi_estimate, posterior_variance_map, sample_rows, spearman, EncoderView,
    KernelReference, KERNEL_EPS, MI_BOUND_SLACK,
};
use crate::distributions::StandardNormalPrior;
use crate::error::{Error, Result};
use crate::models::{
    load_checkpoint, save_checkpoint, sequential_train, vae_train, Model, ObjectiveSpec, TrainConfig, TrainOutcome,
};
use crate::rng::stream;
use crate::samplers::{
    ancestral_sample, gibbs_sample, initial_states, sequential_sample, ChainDecoder, Decoder,
    GibbsConfig, TrainedDecoder,
};

const EXPERIMENT_FILE: &str = "experiment.json";

/// Final numbers of a training run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_nll: Option<f64>,
    pub final_mi: Option<f64>,
    pub final_kl: Option<f64>,
    pub final_stage_mse: Option<Vec<f64>>,
}

fn absolutize(spec: &DatasetSpec, base: &Path) -> DatasetSpec {
    let mut spec = spec.clone();
    if let DatasetSpec::Idx { images, labels, .. } = &mut spec {
        *images = base.join(&*images);
        if let Some(l) = labels {
            *l = base.join(&*l);
        }
    }
    spec
}

/// Trains the configured model and writes metrics, a checkpoint, samples and
/// a summary into `out`. Relative dataset paths are resolved against `base`.
pub fn train(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<(TrainSummary, TrainOutcome)> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.dataset = absolutize(&cfg.dataset, base);
    let dataset = cfg.dataset.load(base, cfg.seed)?;
    let model = cfg.model.build(dataset.dim())?;
    let mut params = ParamSet::new();
    model.init(&mut params, &mut stream(cfg.seed, "init"));
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
        eval: cfg.eval,
    };
    let outcome = match (&model, cfg.objective) {
        (Model::Vae(m), objective) => vae_train(&dataset, m, &mut params, &objective, &tc)?,
        (Model::Sequential(m), ObjectiveSpec::L2 { regularizer }) => {
            sequential_train(&dataset, m, &mut params, &vec![regularizer; m.num_stages()], &tc)?
        }
        (Model::Sequential(_), _) => return Err(Error::invalid("sequential models train on the l2 objective")),
    };
    write_csv(&out.join("metrics.csv"), &outcome.metrics)?;
    let ckpt = out.join("checkpoint");
    save_checkpoint(&ckpt, &cfg.model, dataset.dim(), cfg.seed, outcome.steps, &params)?;
    write_json(&ckpt.join(EXPERIMENT_FILE), &cfg)?;

    let run = LoadedRun { config: cfg.clone(), model, params, dataset };
    let mut rng = stream(cfg.seed, "final-samples");
    match &run.model {
        Model::Vae(_) => {
            let x = run.ancestral(&cfg.samples, &mut rng)?;
            emit_samples(&out.join("samples").join("ancestral"), &x, run.dataset.dims())?;
        }
        Model::Sequential(m) => {
            let traj = sequential_sample(m, &run.params, cfg.samples.count, &mut rng)?;
            for (t, x) in traj.iter().enumerate() {
                emit_samples(&out.join("samples").join(format!("step_{t}")), x, run.dataset.dims())?;
            }
        }
    }
    let stage_mse: Vec<f64> = match &run.model {
        Model::Sequential(m) => (0..m.num_stages())
            .filter_map(|t| outcome.last(&format!("stage{t}/mse")))
            .collect(),
        Model::Vae(_) => Vec::new(),
    };
    let summary = TrainSummary {
        steps: outcome.steps,
        final_nll: outcome.last("nll_per_pixel"),
        final_mi: outcome.last("mi"),
        final_kl: outcome.last("kl"),
        final_stage_mse: (!stage_mse.is_empty()).then_some(stage_mse),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok((summary, outcome))
}

/// A checkpoint together with its experiment and data.
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub model: Model,
    pub params: ParamSet,
    pub dataset: Dataset,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, params) = load_checkpoint(dir)?;
        let config: ExperimentConfig = read_json(&dir.join(EXPERIMENT_FILE))?;
        if config.model != manifest.spec {
            return Err(Error::invalid("checkpoint model does not match its experiment"));
        }
        let dataset = config.dataset.load(dir, config.seed)?;
        if dataset.dim() != manifest.data_dim {
            return Err(Error::invalid(format!(
                "checkpoint expects dimension {}, dataset has {}",
                manifest.data_dim,
                dataset.dim()
            )));
        }
        let model = manifest.spec.build(manifest.data_dim)?;
        let mut expected = ParamSet::new();
        model.init(&mut expected, &mut stream(0, "shape-check"));
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::invalid(format!("checkpoint lacks parameter `{name}` of shape {:?}", t.shape()))),
            }
        }
        Ok(Self { config, model, params, dataset })
    }

    fn ancestral(&self, spec: &SampleSpec, rng: &mut crate::rng::Rng) -> Result<Tensor> {
        match &self.model {
            Model::Vae(m) => {
                let prior = StandardNormalPrior::new(m.latent_dim());
                ancestral_sample(&prior, &TrainedDecoder::new(&m.decoder, &self.params), spec.count, spec.mean_mode, rng)
            }
            Model::Sequential(m) => {
                let prior = StandardNormalPrior::new(m.latent_dim * m.num_stages());
                let dec = ChainDecoder { model: m, params: &self.params };
                ancestral_sample(&prior, &dec, spec.count, spec.mean_mode, rng)
            }
        }
    }

    fn vae(&self) -> Result<&crate::models::VaeModel> {
        match &self.model {
            Model::Vae(m) => Ok(m),
            Model::Sequential(_) => Err(Error::invalid("this command needs a single-stage VAE checkpoint")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleSummary {
    pub mode: SampleMode,
    pub count: usize,
    /// Per-pixel NLL under a Bernoulli kernel density of the training data.
    pub kernel_nll_per_pixel: Option<f64>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn is_binary(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

pub fn gibbs_from_run(run: &LoadedRun, spec: &SampleSpec, rng: &mut crate::rng::Rng) -> Result<Tensor> {
    let m = run.vae()?;
    let prior = StandardNormalPrior::new(m.latent_dim());
    let encoder = EncoderView::new(&m.encoder, &run.params);
    let decoder = TrainedDecoder::new(&m.decoder, &run.params);
    let chains = spec.chains.clamp(1, spec.count.max(1));
    let per_chain = spec.count.div_ceil(chains);
    let init = initial_states(spec.init, &prior, &decoder as &dyn Decoder, chains, rng)?;
    let cfg = GibbsConfig { burn_in: spec.burn_in, thin: spec.thin, count: per_chain, init: spec.init };
    let all = gibbs_sample(&encoder, &decoder, init, &cfg, rng.clone())?;
    Tensor::from_rows(&rows(&all)[..spec.count])
}

/// Draws samples from a checkpoint in the requested mode.
pub fn sample(cfg: &SampleConfig, base: &Path, out: &Path) -> Result<SampleSummary> {
    let run = LoadedRun::load(&base.join(&cfg.checkpoint))?;
    let spec = &cfg.samples;
    if spec.count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut rng = stream(cfg.seed, &format!("sample/{:?}", cfg.mode));
    let dims = run.dataset.dims();
    let last = match cfg.mode {
        SampleMode::Ancestral => {
            let x = run.ancestral(spec, &mut rng)?;
            emit_samples(out, &x, dims)?;
            x
        }
        SampleMode::Gibbs => {
            let x = gibbs_from_run(&run, spec, &mut rng)?;
            emit_samples(out, &x, dims)?;
            x
        }
        SampleMode::Sequential => {
            let Model::Sequential(m) = &run.model else {
                return Err(Error::invalid("sequential sampling needs a sequential checkpoint"));
            };
            let traj = sequential_sample(m, &run.params, spec.count, &mut rng)?;
            for (t, x) in traj.iter().enumerate() {
                emit_samples(&out.join(format!("step_{t}")), x, dims)?;
            }
            traj.last().cloned().expect("trajectory is never empty")
        }
    };
    let kernel_nll_per_pixel = if run.dataset.is_binarized() && is_binary(&last) {
        Some(KernelReference::new(&run.dataset, KERNEL_EPS)?.per_pixel_nll(&rows(&last))?)
    } else {
        None
    };
    let summary = SampleSummary { mode: cfg.mode, count: spec.count, kernel_nll_per_pixel };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiRow {
    pub m: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub log_m: f64,
    pub within_bound: bool,
}

/// MI estimates for every `(M, seed)` pair, written as `mi_sweep.csv`.
pub fn mi_sweep(cfg: &MiSweepConfig, base: &Path, out: &Path) -> Result<Vec<MiRow>> {
    if let Some(&m) = cfg.m_values.iter().find(|&&m| m < 2) {
        return Err(Error::invalid(format!("M must be at least 2, got {m}")));
    }
    if cfg.seeds.is_empty() || cfg.m_values.is_empty() {
        return Err(Error::invalid("mi-sweep needs at least one M and one seed"));
    }
    let run = LoadedRun::load(&base.join(&cfg.checkpoint))?;
    let m_model = run.vae()?;
    let view = EncoderView::new(&m_model.encoder, &run.params);
    let mut out_rows = Vec::new();
    for &m in &cfg.m_values {
        for &seed in &cfg.seeds {
            let mut rng = stream(seed, &format!("mi/{m}"));
            let xs = sample_rows(&run.dataset, m, &mut rng)?;
            let est = mi_estimate(&view, &xs, &mut rng)?;
            out_rows.push(MiRow {
                m,
                seed,
                estimate: est.value,
                std_error: est.std_error,
                log_m: est.upper_bound,
                within_bound: est.value <= est.upper_bound + MI_BOUND_SLACK,
            });
        }
    }
    write_csv(&out.join("mi_sweep.csv"), &out_rows)?;
    Ok(out_rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceMapSummary {
    pub grid_points: usize,
    pub defined_points: usize,
    pub items_used: usize,
    pub spearman_variance_blur: Option<f64>,
}

/// Posterior-variance grid over a 2-D latent space: CSV, heatmap and a
/// contact sheet of decoded means.
pub fn variance_map(cfg: &VarianceMapConfig, base: &Path, out: &Path) -> Result<VarianceMapSummary> {
    let run = LoadedRun::load(&base.join(&cfg.checkpoint))?;
    let m = run.vae()?;
    if m.latent_dim() != 2 {
        return Err(Error::invalid(format!("variance maps need a 2-D latent space, checkpoint has {}", m.latent_dim())));
    }
    let steps = cfg.grid.steps;
    let grid = latent_grid(cfg.grid.lo, cfg.grid.hi, steps)?;
    let view = EncoderView::new(&m.encoder, &run.params);
    let decode = |z: &Tensor| m.forward_generate(&run.params, z);
    let mut rng = stream(cfg.seed, "variance-map");
    let map = posterior_variance_map(&view, &decode, &run.dataset, &grid, cfg.mc_samples, &mut rng)?;
    let blur: Vec<f64> = map.decoded.iter().map(|d| blur_proxy(d)).collect();

    let records: Vec<Vec<String>> = (0..map.grid.len())
        .map(|k| {
            vec![
                (k / steps).to_string(),
                (k % steps).to_string(),
                fmt(map.grid[k][0]),
                fmt(map.grid[k][1]),
                fmt_opt(map.variance[k]),
                fmt(blur[k]),
            ]
        })
        .collect();
    write_csv_records(&out.join("variance_map.csv"), &["row", "col", "z1", "z2", "variance", "blur"], &records)?;

    let defined: Vec<usize> = (0..map.variance.len()).filter(|&k| map.variance[k].is_some()).collect();
    let heat_values: Vec<f64> = map.variance.iter().map(|v| v.unwrap_or(0.0)).collect();
    write_pgm(&out.join("variance.pgm"), &normalize_unit(&heat_values), steps, steps)?;
    if let Dims::Image { height, width } = run.dataset.dims() {
        let images: Vec<Vec<f64>> = map.decoded.iter().map(|d| d.iter().map(|v| v.clamp(0.0, 1.0)).collect()).collect();
        let (sheet, h, w) = contact_sheet(&images, height, width, steps, 1, 0.5)?;
        write_pgm(&out.join("decoded.pgm"), &sheet, h, w)?;
    }
    let rho = if defined.len() >= 2 {
        let v: Vec<f64> = defined.iter().map(|&k| map.variance[k].expect("defined")).collect();
        let b: Vec<f64> = defined.iter().map(|&k| blur[k]).collect();
        Some(spearman(&v, &b)?)
    } else {
        None
    };
    let summary = VarianceMapSummary {
        grid_points: map.grid.len(),
        defined_points: defined.len(),
        items_used: map.items_used,
        spearman_variance_blur: rho,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// The checkpoint directory written by [`train`] under `out`.
pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoint")
}
