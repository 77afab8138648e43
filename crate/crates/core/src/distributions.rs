//! Decoder families over data space and the reparameterizable inference family
//! over latent space.
//!
//! Distribution objects wrap tape variables holding their parameters, either
//! a single `[D]` vector or a `[B, D]` batch. `log_prob`, `kl_to_standard_normal`
//! and `entropy` return one value per row (`[B]`, or `[1]` for a vector).
//! All quantities are in nats.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Tensor, Var};
use crate::error::{Error, Result};

/// Bernoulli logits are clamped to this range before evaluating densities.
pub const LOGIT_CLAMP: f64 = 15.0;

/// Per-coordinate variance of [`GaussianFixedVariance`].
pub const FIXED_VARIANCE: f64 = 0.5;

/// Decoder families available to models and configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GaussianFixedVariance,
    FactorizedBernoulli,
    AutoregressiveBernoulli,
}

impl Family {
    /// Closed-form entropy of the member with parameters `params`
    /// (means for the Gaussian, logits for the Bernoulli).
    pub fn entropy(self, params: &[f64]) -> Result<f64> {
        match self {
            Family::GaussianFixedVariance => {
                Ok(0.5 * params.len() as f64 * (2.0 * PI * std::f64::consts::E * FIXED_VARIANCE).ln())
            }
            Family::FactorizedBernoulli => Ok(params
                .iter()
                .map(|&l| bernoulli_entropy(sigmoid(l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))))
                .sum()),
            Family::AutoregressiveBernoulli => Err(Error::invalid(
                "no closed-form entropy for the autoregressive family",
            )),
        }
    }
}

/// Entropy of a single Bernoulli(p) in nats, with `0 log 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    h(p) + h(1.0 - p)
}

fn last_axis(v: &Var<'_>) -> usize {
    v.shape().len() - 1
}

fn check_same_shape(op: &'static str, params: &Var<'_>, x: &Tensor) -> Result<()> {
    let shape = params.shape();
    if shape != x.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: shape,
            right: x.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_binary(x: &Tensor) -> Result<()> {
    if let Some(v) = x.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain {
            op: "bernoulli log_prob",
            detail: format!("non-binary observation {v}"),
        });
    }
    Ok(())
}

/// `N(mean, I/2)`: the family behind the squared-error reconstruction loss.
#[derive(Clone, Copy, Debug)]
pub struct GaussianFixedVariance<'t> {
    pub mean: Var<'t>,
}

impl<'t> GaussianFixedVariance<'t> {
    pub fn new(mean: Var<'t>) -> Self {
        Self { mean }
    }

    /// `-(N/2) log(pi) - ||x - mean||^2`, since `2 sigma^2 = 1`.
    pub fn log_prob(&self, x: &Tensor) -> Result<Var<'t>> {
        check_same_shape("gaussian log_prob", &self.mean, x)?;
        let n = x.cols() as f64;
        let xv = self.mean.tape().constant(x.clone());
        xv.sub(&self.mean)?
            .square()?
            .sum_axis(last_axis(&self.mean))?
            .neg()?
            .add_scalar(-0.5 * n * PI.ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let std = FIXED_VARIANCE.sqrt();
        self.mean
            .value()
            .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
    }
}

/// Diagonal Gaussian `N(mean, diag(exp(log_std))^2)` over latent codes.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalGaussian<'t> {
    pub mean: Var<'t>,
    pub log_std: Var<'t>,
}

impl<'t> DiagonalGaussian<'t> {
    pub fn new(mean: Var<'t>, log_std: Var<'t>) -> Result<Self> {
        if mean.shape() != log_std.shape() {
            return Err(Error::ShapeMismatch {
                op: "DiagonalGaussian::new",
                left: mean.shape(),
                right: log_std.shape(),
            });
        }
        Ok(Self { mean, log_std })
    }

    /// `mean + exp(log_std) * eps` with `eps` held fixed.
    pub fn reparam_with(&self, eps: &Tensor) -> Result<Var<'t>> {
        check_same_shape("reparam_sample", &self.mean, eps)?;
        let e = self.mean.tape().constant(eps.clone());
        self.mean.add(&self.log_std.exp()?.mul(&e)?)
    }

    /// Reparameterized draw; gradients flow to `mean` and `log_std`.
    pub fn reparam_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Var<'t>> {
        let eps = Tensor::randn(self.mean.shape(), 1.0, rng);
        self.reparam_with(&eps)
    }

    /// Plain draw, no gradient path.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let mean = self.mean.value();
        let log_std = self.log_std.value();
        let data = mean
            .data()
            .iter()
            .zip(log_std.data())
            .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::from_parts(mean.shape().to_vec(), data)
    }

    /// `KL(q || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2)`.
    pub fn kl_to_standard_normal(&self) -> Result<Var<'t>> {
        let var = self.log_std.scale(2.0)?.exp()?;
        self.mean
            .square()?
            .add(&var)?
            .sub(&self.log_std.scale(2.0)?)?
            .add_scalar(-1.0)?
            .sum_axis(last_axis(&self.mean))?
            .scale(0.5)
    }

    pub fn entropy(&self) -> Result<Var<'t>> {
        let d = self.mean.shape().last().copied().unwrap_or(1) as f64;
        self.log_std
            .sum_axis(last_axis(&self.log_std))?
            .add_scalar(0.5 * d * (2.0 * PI * std::f64::consts::E).ln())
    }

    /// Log-density of `z` under each row.
    pub fn log_prob(&self, z: &Tensor) -> Result<Var<'t>> {
        check_same_shape("diagonal gaussian log_prob", &self.mean, z)?;
        let d = z.cols() as f64;
        let zv = self.mean.tape().constant(z.clone());
        let std = self.log_std.exp()?;
        let standardized = zv.sub(&self.mean)?.div(&std)?.square()?;
        let axis = last_axis(&self.mean);
        standardized
            .sum_axis(axis)?
            .scale(-0.5)?
            .sub(&self.log_std.sum_axis(axis)?)?
            .add_scalar(-0.5 * d * (2.0 * PI).ln())
    }
}

/// Log-density of a diagonal Gaussian evaluated on plain slices.
pub fn diag_gaussian_log_density(mean: &[f64], log_std: &[f64], z: &[f64]) -> f64 {
    let mut acc = -0.5 * mean.len() as f64 * (2.0 * PI).ln();
    for i in 0..mean.len() {
        let s = log_std[i].exp();
        let u = (z[i] - mean[i]) / s;
        acc -= 0.5 * u * u + log_std[i];
    }
    acc
}

/// Independent Bernoulli pixels with `p_i = sigmoid(logit_i)`.
#[derive(Clone, Copy, Debug)]
pub struct FactorizedBernoulli<'t> {
    pub logits: Var<'t>,
}

impl<'t> FactorizedBernoulli<'t> {
    pub fn new(logits: Var<'t>) -> Self {
        Self { logits }
    }

    /// `sum_i x_i log p_i + (1 - x_i) log(1 - p_i)`, written as
    /// `x * l - softplus(l)` on clamped logits.
    pub fn log_prob(&self, x: &Tensor) -> Result<Var<'t>> {
        check_same_shape("bernoulli log_prob", &self.logits, x)?;
        check_binary(x)?;
        let l = self.logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)?;
        let xv = self.logits.tape().constant(x.clone());
        xv.mul(&l)?.sub(&l.softplus()?)?.sum_axis(last_axis(&l))
    }

    pub fn probs(&self) -> Tensor {
        self.logits
            .value()
            .map(|l| sigmoid(l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        self.probs()
            .map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
    }

    pub fn entropy(&self) -> Result<Vec<f64>> {
        let v = self.logits.value();
        Ok((0..v.rows())
            .map(|r| {
                v.row(r)
                    .iter()
                    .map(|&l| bernoulli_entropy(sigmoid(l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))))
                    .sum()
            })
            .collect())
    }
}

/// Bernoulli log-likelihood of a binary row under logits, on plain slices.
pub fn bernoulli_log_prob_values(logits: &[f64], x: &[f64]) -> f64 {
    logits
        .iter()
        .zip(x)
        .map(|(&l, &xi)| {
            let l = l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            xi * l - softplus(l)
        })
        .sum()
}

/// Source of per-position logits for an autoregressive Bernoulli model.
///
/// Given a batch `x` of shape `[B, N]`, implementations return `[B, N]`
/// logits where logit `i` may depend on `x_j` only for `j < i`.
pub trait AutoregressiveLogits<'t> {
    fn dim(&self) -> usize;
    fn logits(&self, x: Var<'t>) -> Result<Var<'t>>;
}

/// Raster-order autoregressive distribution over binary vectors.
pub struct AutoregressiveBernoulli<C> {
    pub conditional: C,
}

impl<'t, C: AutoregressiveLogits<'t>> AutoregressiveBernoulli<C> {
    pub fn new(conditional: C) -> Self {
        Self { conditional }
    }

    /// Exact log-likelihood by teacher forcing: one pass over `x`.
    pub fn log_prob(&self, x: Var<'t>) -> Result<Var<'t>> {
        let xv = x.value();
        check_binary(&xv)?;
        let logits = self.conditional.logits(x)?;
        FactorizedBernoulli::new(logits).log_prob(&xv)
    }

    /// Sequential ancestral draw of `batch` rows, one pixel at a time.
    pub fn sample<R: Rng + ?Sized>(&self, tape: &'t crate::autodiff::Tape, batch: usize, rng: &mut R) -> Result<Tensor> {
        let n = self.conditional.dim();
        let mut x = Tensor::zeros(vec![batch, n]);
        for i in 0..n {
            let logits = self.conditional.logits(tape.constant(x.clone()))?.value();
            for b in 0..batch {
                let p = sigmoid(logits.row(b)[i].clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
                x.data_mut()[b * n + i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            }
        }
        Ok(x)
    }
}

/// `N(0, I_d)` prior over latent codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StandardNormalPrior {
    pub dim: usize,
}

impl StandardNormalPrior {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Tensor {
        Tensor::randn(vec![count, self.dim], 1.0, rng)
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let zeros = vec![0.0; z.len()];
        diag_gaussian_log_density(&zeros, &zeros, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient_check, Tape};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn gaussian_at_its_mean() {
        let tape = Tape::new();
        let x = vec_t(&[0.3, -1.2, 4.0]);
        let d = GaussianFixedVariance::new(tape.constant(x.clone()));
        let lp = d.log_prob(&x).unwrap().item().unwrap();
        assert!((lp - (-1.5 * PI.ln())).abs() < 1e-12);
    }

    #[test]
    fn gaussian_dimension_mismatch() {
        let tape = Tape::new();
        let d = GaussianFixedVariance::new(tape.constant(vec_t(&[0.0, 0.0])));
        assert!(d.log_prob(&vec_t(&[0.0])).is_err());
    }

    #[test]
    fn uniform_bernoulli() {
        let tape = Tape::new();
        let d = FactorizedBernoulli::new(tape.constant(Tensor::zeros(vec![4])));
        for x in [[0., 0., 0., 0.], [1., 0., 1., 1.]] {
            let lp = d.log_prob(&vec_t(&x)).unwrap().item().unwrap();
            assert!((lp + 4.0 * 2f64.ln()).abs() < 1e-12);
        }
        assert!(d.log_prob(&vec_t(&[0.5, 0., 0., 0.])).is_err());
    }

    #[test]
    fn degenerate_bernoulli_sample() {
        let tape = Tape::new();
        let d = FactorizedBernoulli::new(tape.constant(Tensor::full(vec![5], 40.0)));
        let mut rng = seeded(3);
        assert_eq!(d.sample(&mut rng).data(), &[1.0; 5]);
    }

    #[test]
    fn near_zero_std_sample() {
        let tape = Tape::new();
        let q = DiagonalGaussian::new(
            tape.constant(Tensor::zeros(vec![3])),
            tape.constant(Tensor::full(vec![3], -20.0)),
        )
        .unwrap();
        let mut rng = seeded(0);
        let s = q.sample(&mut rng);
        assert!(s.data().iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let tape = Tape::new();
        let mean = vec_t(&[0.25, -1.0]);
        let d = GaussianFixedVariance::new(tape.constant(mean.clone()));
        let mut rng = seeded(11);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let s = d.sample(&mut rng);
            acc[0] += s.data()[0];
            acc[1] += s.data()[1];
        }
        let bound = 3.0 * (0.5 / n as f64).sqrt();
        for i in 0..2 {
            assert!((acc[i] / n as f64 - mean.data()[i]).abs() < bound);
        }
    }

    #[test]
    fn reparam_identities() {
        let tape = Tape::new();
        let mean = tape.param(vec_t(&[0.5, -0.3]));
        let log_std = tape.param(vec_t(&[0.1, -0.7]));
        let q = DiagonalGaussian::new(mean, log_std).unwrap();
        let s = q.reparam_with(&Tensor::zeros(vec![2])).unwrap();
        assert_eq!(s.value().data(), mean.value().data());

        let eps = vec_t(&[1.3, -0.4]);
        for i in 0..2 {
            let tape = Tape::new();
            let mean = tape.param(vec_t(&[0.5, -0.3]));
            let log_std = tape.param(vec_t(&[0.1, -0.7]));
            let q = DiagonalGaussian::new(mean, log_std).unwrap();
            let s = q.reparam_with(&eps).unwrap().slice(0, i, i + 1).unwrap().sum().unwrap();
            let g = tape.backward(s).unwrap();
            let mut unit = vec![0.0; 2];
            unit[i] = 1.0;
            assert_eq!(g.get(mean).unwrap().data(), unit.as_slice());
            // d sample_i / d log_std_i = eps_i exp(log_std_i)
            let ls = [0.1f64, -0.7][i];
            let expected = eps.data()[i] * ls.exp();
            assert!((g.get(log_std).unwrap().data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn reparam_gradient_matches_finite_differences() {
        let eps = vec_t(&[0.8, -1.1, 0.2]);
        let err = gradient_check(
            |_, v| {
                let q = DiagonalGaussian::new(v[0], v[1])?;
                q.reparam_with(&eps)?.square()?.sum()
            },
            &[vec_t(&[0.1, 0.2, -0.3]), vec_t(&[-0.5, 0.3, 0.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn kl_known_values() {
        let tape = Tape::new();
        let std_normal = DiagonalGaussian::new(
            tape.constant(Tensor::zeros(vec![3])),
            tape.constant(Tensor::zeros(vec![3])),
        )
        .unwrap();
        assert_eq!(std_normal.kl_to_standard_normal().unwrap().item().unwrap(), 0.0);
        let shifted = DiagonalGaussian::new(
            tape.constant(vec_t(&[1.0, 0.0])),
            tape.constant(Tensor::zeros(vec![2])),
        )
        .unwrap();
        assert!((shifted.kl_to_standard_normal().unwrap().item().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mu = [0.7, -0.4, 1.1];
        let ls = [-0.3, 0.2, -0.8];
        let tape = Tape::new();
        let q = DiagonalGaussian::new(tape.constant(vec_t(&mu)), tape.constant(vec_t(&ls))).unwrap();
        let closed = q.kl_to_standard_normal().unwrap().item().unwrap();
        let prior = StandardNormalPrior::new(3);
        let mut rng = seeded(5);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        let mut z = [0.0; 3];
        for _ in 0..n {
            for i in 0..3 {
                z[i] = mu[i] + ls[i].exp() * rng.sample::<f64, _>(StandardNormal);
            }
            let term = diag_gaussian_log_density(&mu, &ls, &z) - prior.log_density(&z);
            s += term;
            s2 += term * term;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - closed).abs() < 3.0 * se, "{mean} vs {closed} (se {se})");
    }

    #[test]
    fn entropies() {
        assert!((Family::FactorizedBernoulli.entropy(&[0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(bernoulli_entropy(0.0), 0.0);
        assert_eq!(bernoulli_entropy(1.0), 0.0);
        let logit = (0.25f64 / 0.75).ln();
        let h = Family::FactorizedBernoulli.entropy(&[logit, logit]).unwrap();
        let expected = 2.0 * (-0.25 * 0.25f64.ln() - 0.75 * 0.75f64.ln());
        assert!((h - expected).abs() < 1e-12);
        assert!(Family::AutoregressiveBernoulli.entropy(&[0.0]).is_err());
    }

    #[test]
    fn diagonal_gaussian_entropy_matches_formula() {
        let tape = Tape::new();
        let q = DiagonalGaussian::new(
            tape.constant(vec_t(&[0.0, 3.0])),
            tape.constant(vec_t(&[0.5, -1.0])),
        )
        .unwrap();
        let h = q.entropy().unwrap().item().unwrap();
        let expected = (0.5 - 1.0) + (2.0 * PI * std::f64::consts::E).ln();
        assert!((h - expected).abs() < 1e-12);
    }

    /// Two-pixel conditional: logit_0 = a, logit_1 = b + c * x_0.
    struct TwoPixel {
        a: f64,
        b: f64,
        c: f64,
    }

    impl<'t> AutoregressiveLogits<'t> for TwoPixel {
        fn dim(&self) -> usize {
            2
        }
        fn logits(&self, x: Var<'t>) -> Result<Var<'t>> {
            let xv = x.value();
            let rows: Vec<Vec<f64>> = (0..xv.rows())
                .map(|r| vec![self.a, self.b + self.c * xv.row(r)[0]])
                .collect();
            let t = Tensor::from_rows(&rows)?;
            Ok(x.tape().constant(t))
        }
    }

    #[test]
    fn autoregressive_two_pixel_normalizes() {
        let tape = Tape::new();
        let d = AutoregressiveBernoulli::new(TwoPixel { a: 0.3, b: -1.0, c: 2.5 });
        let all = Tensor::from_rows(&[vec![0., 0.], vec![0., 1.], vec![1., 0.], vec![1., 1.]]).unwrap();
        let lp = d.log_prob(tape.constant(all)).unwrap().value();
        let total: f64 = lp.data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reparam_matches_direct_sampling_ks() {
        let tape = Tape::new();
        let q = DiagonalGaussian::new(tape.constant(vec_t(&[0.4])), tape.constant(vec_t(&[-0.2]))).unwrap();
        let n = 10_000;
        let mut r1 = seeded(1);
        let mut r2 = seeded(2);
        let mut a: Vec<f64> = (0..n).map(|_| q.sample(&mut r1).data()[0]).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|_| q.reparam_sample(&mut r2).unwrap().value().data()[0])
            .collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / n as f64).abs());
        }
        let critical = 1.628 * ((2 * n) as f64 / (n * n) as f64).sqrt();
        assert!(d < critical, "KS {d} >= {critical}");
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..6), seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let ls: Vec<f64> = mu.iter().map(|_| rng.random_range(-4.0..2.0)).collect();
            let tape = Tape::new();
            let q = DiagonalGaussian::new(tape.constant(vec_t(&mu)), tape.constant(vec_t(&ls))).unwrap();
            prop_assert!(q.kl_to_standard_normal().unwrap().item().unwrap() >= 0.0);
        }

        #[test]
        fn factorized_bernoulli_normalizes(n in 1usize..=12, seed in 0u64..100) {
            let mut rng = seeded(seed);
            let logits = Tensor::randn(vec![n], 3.0, &mut rng);
            let rows: Vec<Vec<f64>> = (0..1usize << n)
                .map(|k| (0..n).map(|i| ((k >> i) & 1) as f64).collect())
                .collect();
            let total: f64 = rows
                .iter()
                .map(|x| bernoulli_log_prob_values(logits.data(), x).exp())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
