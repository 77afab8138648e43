//! Mutual-information estimation, posterior-variance maps, KL tracking and
//! sample-quality measures.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::data::Dataset;
use crate::distributions::diag_gaussian_log_density;
use crate::error::{Error, Result};
use crate::objectives::{elbo_regularizer, ConditionalDecoder, InferenceModel};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const MI_BOUND_SLACK: f64 = 1e-9;

/// An inference distribution that can be sampled and evaluated pointwise.
pub trait CodeDensity {
    /// One code per row of `xs`.
    fn sample_codes(&self, xs: &Tensor, rng: &mut crate::rng::Rng) -> Result<Tensor>;
    /// `out[i][j] = log q(z_i | x_j)`.
    fn log_density_matrix(&self, xs: &Tensor, zs: &Tensor) -> Result<Vec<Vec<f64>>>;
}

/// A trained diagonal-Gaussian encoder with its parameters.
pub struct EncoderView<'a, E: InferenceModel + ?Sized> {
    pub encoder: &'a E,
    pub params: &'a ParamSet,
}

impl<'a, E: InferenceModel + ?Sized> EncoderView<'a, E> {
    pub fn new(encoder: &'a E, params: &'a ParamSet) -> Self {
        Self { encoder, params }
    }

    fn moments(&self, xs: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let q = self.encoder.posterior(&b, tape.constant(xs.clone()))?;
        Ok((q.mean.value(), q.log_std.value()))
    }
}

impl<E: InferenceModel + ?Sized> CodeDensity for EncoderView<'_, E> {
    fn sample_codes(&self, xs: &Tensor, rng: &mut crate::rng::Rng) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let q = self.encoder.posterior(&b, tape.constant(xs.clone()))?;
        Ok(q.sample(rng))
    }

    fn log_density_matrix(&self, xs: &Tensor, zs: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (mean, log_std) = self.moments(xs)?;
        if zs.cols() != mean.cols() {
            return Err(Error::ShapeMismatch {
                op: "log_density_matrix",
                left: zs.shape().to_vec(),
                right: mean.shape().to_vec(),
            });
        }
        Ok((0..zs.rows())
            .map(|i| {
                (0..xs.rows())
                    .map(|j| diag_gaussian_log_density(mean.row(j), log_std.row(j), zs.row(i)))
                    .collect()
            })
            .collect())
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiEstimate {
    /// Nats.
    pub value: f64,
    pub num_samples: usize,
    /// `log M`.
    pub upper_bound: f64,
    /// Bootstrap standard error over the per-sample terms.
    pub std_error: f64,
}

/// Per-sample terms `log q(z_i|x_i) - log((1/M) sum_j q(z_i|x_j))`.
pub fn mi_terms(log_q: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = log_q.len();
    if m < 2 {
        return Err(Error::invalid(format!("MI estimate needs M >= 2, got {m}")));
    }
    let log_m = (m as f64).ln();
    log_q
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != m {
                return Err(Error::invalid("log-density matrix must be square"));
            }
            if let Some(j) = row.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Domain {
                    op: "mi_estimate",
                    detail: format!("log q(z_{i} | x_{j}) = {}", row[j]),
                });
            }
            if !row[i].is_finite() {
                return Err(Error::Domain {
                    op: "mi_estimate",
                    detail: format!("log q(z_{i} | x_{i}) = {} for a code drawn from x_{i}", row[i]),
                });
            }
            Ok(row[i] - (log_sum_exp(row) - log_m))
        })
        .collect()
}

/// Standard error of the mean of `terms` by nonparametric bootstrap.
pub fn bootstrap_std_error<R: Rng + ?Sized>(terms: &[f64], resamples: usize, rng: &mut R) -> f64 {
    let n = terms.len();
    if n == 0 || resamples < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| terms[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Estimates `I_q(x; z)` from `M = xs.rows()` pairs `(x_i, z_i ~ q(z|x_i))`.
pub fn mi_estimate(encoder: &dyn CodeDensity, xs: &Tensor, rng: &mut crate::rng::Rng) -> Result<MiEstimate> {
    let m = xs.rows();
    if xs.rank() != 2 || m < 2 {
        return Err(Error::invalid(format!("MI estimate needs M >= 2 data rows, got {:?}", xs.shape())));
    }
    let zs = encoder.sample_codes(xs, rng)?;
    let terms = mi_terms(&encoder.log_density_matrix(xs, &zs)?)?;
    let value = terms.iter().sum::<f64>() / m as f64;
    let upper_bound = (m as f64).ln();
    if value > upper_bound + MI_BOUND_SLACK {
        return Err(Error::Domain {
            op: "mi_estimate",
            detail: format!("estimate {value} exceeds log M = {upper_bound}"),
        });
    }
    Ok(MiEstimate {
        value,
        num_samples: m,
        upper_bound,
        std_error: bootstrap_std_error(&terms, BOOTSTRAP_RESAMPLES, rng),
    })
}

/// `M` dataset rows drawn uniformly with replacement.
pub fn sample_rows<R: Rng + ?Sized>(dataset: &Dataset, m: usize, rng: &mut R) -> Result<Tensor> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dataset"));
    }
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..dataset.len())).collect();
    dataset.batch(&idx)
}

/// Batch mean of `KL(q(z|x) || N(0, I))`.
pub fn kl_posterior_prior<E: InferenceModel + ?Sized>(encoder: &E, params: &ParamSet, batch: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    let q = encoder.posterior(&b, tape.constant(batch.clone()))?;
    elbo_regularizer(&q)?.item()
}

/// `-mean_b log p(x_b)/N` from per-row log-likelihoods.
pub fn per_pixel_nll_from_loglik(row_loglik: &[f64], n: usize) -> Result<f64> {
    if row_loglik.is_empty() || n == 0 {
        return Err(Error::invalid("per-pixel NLL needs rows and a positive dimension"));
    }
    Ok(-row_loglik.iter().sum::<f64>() / (row_loglik.len() * n) as f64)
}

/// Per-pixel negative log-likelihood of `x` under `p(x|z)`.
pub fn per_pixel_nll<D: ConditionalDecoder + ?Sized>(
    decoder: &D,
    params: &ParamSet,
    z: &Tensor,
    x: &Tensor,
) -> Result<f64> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    let ll = decoder.log_likelihood(&b, tape.constant(z.clone()), x)?.value();
    per_pixel_nll_from_loglik(ll.data(), x.cols())
}

/// Coordinate-variance sum of the items under self-normalized weights
/// `exp(log_weights)`. `None` when every weight is zero.
pub fn weighted_coordinate_variance(items: &[Vec<f64>], log_weights: &[f64]) -> Option<f64> {
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY || items.is_empty() {
        return None;
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - lse).exp()).collect();
    let n = items[0].len();
    let mut mean = vec![0.0; n];
    for (x, &wi) in items.iter().zip(&w) {
        for k in 0..n {
            mean[k] += wi * x[k];
        }
    }
    let mut var = 0.0;
    for (x, &wi) in items.iter().zip(&w) {
        for k in 0..n {
            var += wi * (x[k] - mean[k]).powi(2);
        }
    }
    Some(var)
}

/// `steps x steps` points covering `[lo, hi]^2`, row-major with the first
/// coordinate varying slowest.
pub fn latent_grid(lo: f64, hi: f64, steps: usize) -> Result<Tensor> {
    if steps < 2 || !(hi > lo) {
        return Err(Error::invalid("grid needs steps >= 2 and hi > lo"));
    }
    let ticks: Vec<f64> = (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect();
    let data = ticks.iter().flat_map(|&a| ticks.iter().flat_map(move |&b| [a, b])).collect();
    Tensor::new(vec![steps * steps, 2], data)
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceMap {
    pub grid: Vec<Vec<f64>>,
    /// `sum_i Var_{q(x|z)}[x_i]` per grid point; `None` if unreachable.
    pub variance: Vec<Option<f64>>,
    /// Decoded means `g(z)` per grid point.
    pub decoded: Vec<Vec<f64>>,
    pub items_used: usize,
}

pub const MIN_MC_SAMPLES: usize = 100;

/// Estimates the posterior coordinate-variance sum at each grid code by
/// weighting dataset items with `q(z|x)`.
///
/// With `mc_samples >= dataset.len()` every item is used once; otherwise a
/// uniform subsample of `mc_samples` items without replacement.
pub fn posterior_variance_map(
    encoder: &dyn CodeDensity,
    decode_mean: &dyn Fn(&Tensor) -> Result<Tensor>,
    dataset: &Dataset,
    grid: &Tensor,
    mc_samples: usize,
    rng: &mut crate::rng::Rng,
) -> Result<VarianceMap> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::invalid(format!("mc_samples must be >= {MIN_MC_SAMPLES}, got {mc_samples}")));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("posterior variance needs a non-empty dataset"));
    }
    let indices: Vec<usize> = if mc_samples >= dataset.len() {
        (0..dataset.len()).collect()
    } else {
        rand::seq::index::sample(rng, dataset.len(), mc_samples).into_vec()
    };
    let xs = dataset.batch(&indices)?;
    let items: Vec<Vec<f64>> = indices.iter().map(|&i| dataset.items()[i].clone()).collect();
    let log_q = encoder.log_density_matrix(&xs, grid)?;
    let variance = log_q.iter().map(|lw| weighted_coordinate_variance(&items, lw)).collect();
    let decoded_t = decode_mean(grid)?;
    Ok(VarianceMap {
        grid: (0..grid.rows()).map(|r| grid.row(r).to_vec()).collect(),
        variance,
        decoded: (0..decoded_t.rows()).map(|r| decoded_t.row(r).to_vec()).collect(),
        items_used: items.len(),
    })
}

/// Largest Euclidean distance between two rows; zero for fewer than two.
pub fn max_pairwise_distance(rows: &Tensor) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..rows.rows() {
        for j in i + 1..rows.rows() {
            let d2: f64 = rows.row(i).iter().zip(rows.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            worst = worst.max(d2.sqrt());
        }
    }
    worst
}

/// Mean of `g (1 - g)`: zero for a crisp binary image, largest at uniform grey.
pub fn blur_proxy(image: &[f64]) -> f64 {
    image.iter().map(|g| g * (1.0 - g)).sum::<f64>() / image.len() as f64
}

/// Mean absolute difference between horizontally and vertically adjacent pixels.
pub fn sharpness(image: &[f64], height: usize, width: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..height {
        for c in 0..width {
            let v = image[r * width + c];
            if c + 1 < width {
                acc += (image[r * width + c + 1] - v).abs();
                count += 1;
            }
            if r + 1 < height {
                acc += (image[(r + 1) * width + c] - v).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length series of length >= 2"));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Mixture of factorized Bernoulli kernels centred on reference items:
/// `p(x) = (1/K) sum_k prod_i (1-eps)^[x_i = r_ki] eps^[x_i != r_ki]`.
///
/// Gives a fixed yardstick for comparing binary samples from different models.
#[derive(Clone, Debug)]
pub struct KernelReference {
    items: Vec<Vec<f64>>,
    eps: f64,
}

pub const KERNEL_EPS: f64 = 0.05;

impl KernelReference {
    pub fn new(dataset: &Dataset, eps: f64) -> Result<Self> {
        if !dataset.is_binarized() {
            return Err(Error::invalid("kernel reference needs binary data"));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::invalid("kernel eps must lie in (0, 0.5)"));
        }
        Ok(Self {
            items: dataset.items().to_vec(),
            eps,
        })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let (lo, hi) = (self.eps.ln(), (1.0 - self.eps).ln());
        let per: Vec<f64> = self
            .items
            .iter()
            .map(|r| {
                r.iter()
                    .zip(x)
                    .map(|(a, b)| if (a - b).abs() < 0.5 { hi } else { lo })
                    .sum()
            })
            .collect();
        log_sum_exp(&per) - (self.items.len() as f64).ln()
    }

    /// Mean per-pixel negative log-density of the samples.
    pub fn per_pixel_nll(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let ll: Vec<f64> = samples.iter().map(|s| self.log_density(s)).collect();
        per_pixel_nll_from_loglik(&ll, samples.first().map(Vec::len).unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dims;
    use crate::rng::seeded;

    #[test]
    fn pairwise_distance_of_rows() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 0.0, 3.0, 4.0, 1.0, 1.0]).unwrap();
        assert_eq!(max_pairwise_distance(&t), 5.0);
        assert_eq!(max_pairwise_distance(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()), 0.0);
    }

    struct Constant;

    impl CodeDensity for Constant {
        fn sample_codes(&self, xs: &Tensor, rng: &mut crate::rng::Rng) -> Result<Tensor> {
            Ok(Tensor::randn(vec![xs.rows(), 1], 1.0, rng))
        }
        fn log_density_matrix(&self, xs: &Tensor, zs: &Tensor) -> Result<Vec<Vec<f64>>> {
            Ok((0..zs.rows())
                .map(|i| vec![diag_gaussian_log_density(&[0.0], &[0.0], zs.row(i)); xs.rows()])
                .collect())
        }
    }

    #[test]
    fn identical_posteriors_give_zero_mi() {
        let xs = Tensor::uniform(vec![64, 3], 0.0, 1.0, &mut seeded(1));
        let est = mi_estimate(&Constant, &xs, &mut seeded(2)).unwrap();
        assert!(est.value.abs() < 1e-9, "{}", est.value);
    }

    #[test]
    fn deterministic_code_hits_log_m() {
        // log q(z_i | x_j) = 0 if i == j else -inf
        let m = 16;
        let lq: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 0.0 } else { f64::NEG_INFINITY }).collect())
            .collect();
        let terms = mi_terms(&lq).unwrap();
        let v = terms.iter().sum::<f64>() / m as f64;
        assert!((v - (m as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn non_finite_density_names_pair() {
        let lq = vec![vec![0.0, f64::NAN], vec![0.0, 0.0]];
        let msg = mi_terms(&lq).unwrap_err().to_string();
        assert!(msg.contains("z_0 | x_1"), "{msg}");
    }

    #[test]
    fn m_below_two_is_rejected() {
        assert!(mi_terms(&[vec![0.0]]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        let rho = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_dataset_has_zero_variance() {
        let ds = Dataset::new("one", vec![vec![0.2, 0.9]], Dims::Flat(2)).unwrap();
        struct Wide;
        impl CodeDensity for Wide {
            fn sample_codes(&self, xs: &Tensor, _: &mut crate::rng::Rng) -> Result<Tensor> {
                Ok(Tensor::zeros(vec![xs.rows(), 2]))
            }
            fn log_density_matrix(&self, xs: &Tensor, zs: &Tensor) -> Result<Vec<Vec<f64>>> {
                Ok((0..zs.rows()).map(|i| vec![-zs.row(i)[0].powi(2); xs.rows()]).collect())
            }
        }
        let grid = latent_grid(-1.0, 1.0, 3).unwrap();
        let map = posterior_variance_map(&Wide, &|z: &Tensor| Ok(Tensor::zeros(vec![z.rows(), 2])), &ds, &grid, 100, &mut seeded(0)).unwrap();
        assert!(map.variance.iter().all(|v| *v == Some(0.0)));
        assert_eq!(map.items_used, 1);
    }

    #[test]
    fn unreachable_weights_are_absent() {
        assert_eq!(weighted_coordinate_variance(&[vec![1.0]], &[f64::NEG_INFINITY]), None);
    }

    #[test]
    fn blur_and_sharpness() {
        assert_eq!(blur_proxy(&[0.0, 1.0]), 0.0);
        assert_eq!(blur_proxy(&[0.5; 4]), 0.25);
        assert_eq!(sharpness(&[0.0, 1.0, 1.0, 0.0], 2, 2), 1.0);
    }

    #[test]
    fn kernel_reference_prefers_training_items() {
        let ds = Dataset::new("p", vec![vec![1.0, 1.0, 0.0, 0.0]], Dims::Flat(4)).unwrap();
        let r = KernelReference::new(&ds, 0.05).unwrap();
        let good = r.per_pixel_nll(&[vec![1.0, 1.0, 0.0, 0.0]]).unwrap();
        let bad = r.per_pixel_nll(&[vec![0.0, 0.0, 1.0, 1.0]]).unwrap();
        assert!((good + 0.95f64.ln()).abs() < 1e-12);
        assert!(bad > good);
    }

    #[test]
    fn bootstrap_se_of_constant_is_zero() {
        assert_eq!(bootstrap_std_error(&[1.0; 10], 100, &mut seeded(0)), 0.0);
    }
}
