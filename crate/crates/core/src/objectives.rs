//! The generalized VAE loss family `-E_q[log p(x|z)] + R(q)` and its
//! relatives: the naive prior-sampled bound and the squared-error form.
//!
//! Every loss here returns an [`ObjectiveReport`] whose `total` is a tape
//! variable ready for [`Tape::backward`](crate::autodiff::Tape::backward).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Tensor, Var};
use crate::distributions::{DiagonalGaussian, StandardNormalPrior};
use crate::error::{Error, Result};

/// Reparameterizable inference model `q(z|x)`.
pub trait InferenceModel {
    fn latent_dim(&self) -> usize;
    fn posterior<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<DiagonalGaussian<'t>>;
}

/// Conditional data model `p(x|z)` drawn from some decoder family.
pub trait ConditionalDecoder {
    fn data_dim(&self) -> usize;
    /// `log p(x_b | z_b)` for every row.
    fn log_likelihood<'t>(&self, params: &Bound<'t>, z: Var<'t>, x: &Tensor) -> Result<Var<'t>>;
}

/// Decoder that exposes a mean image `g(z)`.
pub trait MeanDecoder {
    fn mean<'t>(&self, params: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    ElboKl,
}

/// `R(q)`; `ElboKl` is the batch mean of `KL(q(z|x) || N(0, I))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularizer {
    pub kind: RegularizerKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl Regularizer {
    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            weight: 1.0,
        }
    }

    pub fn elbo_kl() -> Self {
        Self {
            kind: RegularizerKind::ElboKl,
            weight: 1.0,
        }
    }

    pub fn weighted(self, weight: f64) -> Self {
        Self { weight, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::invalid(format!(
                "regularizer weight must be finite and non-negative, got {}",
                self.weight
            )));
        }
        Ok(())
    }

    pub fn evaluate<'t>(&self, posterior: &DiagonalGaussian<'t>) -> Result<Var<'t>> {
        match self.kind {
            RegularizerKind::None => Ok(posterior
                .mean
                .tape()
                .constant(Tensor::scalar(0.0))),
            RegularizerKind::ElboKl => elbo_regularizer(posterior)?.scale(self.weight),
        }
    }
}

/// Batch mean of the closed-form `KL(q(z|x) || N(0, I))`.
pub fn elbo_regularizer<'t>(posterior: &DiagonalGaussian<'t>) -> Result<Var<'t>> {
    posterior.kl_to_standard_normal()?.mean()
}

/// Loss value with its two components, all in nats.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveReport<'t> {
    /// `-reconstruction + regularizer`, on the tape.
    pub total: Var<'t>,
    pub total_loss: f64,
    /// Batch mean of `log p(x|z)`.
    pub reconstruction: f64,
    pub regularizer: f64,
}

impl<'t> ObjectiveReport<'t> {
    fn assemble(recon: Var<'t>, reg: Var<'t>) -> Result<Self> {
        let total = reg.sub(&recon)?;
        Ok(Self {
            total,
            total_loss: total.item()?,
            reconstruction: recon.item()?,
            regularizer: reg.item()?,
        })
    }
}

fn non_empty(batch: &Tensor) -> Result<()> {
    if batch.rank() != 2 || batch.rows() == 0 {
        return Err(Error::invalid(format!(
            "expected a non-empty [batch, dim] tensor, got {:?}",
            batch.shape()
        )));
    }
    Ok(())
}

/// Single-sample estimator of the generalized VAE loss.
///
/// One reparameterized `z ~ q(z|x)` is drawn per datum; the reconstruction
/// term is the batch mean of `log p(x|z)`.
pub fn vae_loss<'t, E, D, R>(
    params: &Bound<'t>,
    batch: &Tensor,
    encoder: &E,
    decoder: &D,
    reg: &Regularizer,
    rng: &mut R,
) -> Result<ObjectiveReport<'t>>
where
    E: InferenceModel + ?Sized,
    D: ConditionalDecoder + ?Sized,
    R: Rng + ?Sized,
{
    non_empty(batch)?;
    let tape = params.tape()?;
    let x = tape.constant(batch.clone());
    let q = encoder.posterior(params, x)?;
    let z = q.reparam_sample(rng)?;
    let recon = decoder.log_likelihood(params, z, batch)?.mean()?;
    let reg_term = reg.evaluate(&q)?;
    ObjectiveReport::assemble(recon, reg_term)
}

/// The naive bound `E_{p(z)}[log p(x|z)]` with `z` drawn from the prior and
/// never looking at `x`. Returns the negated mean, ready to minimize.
///
/// Each of the `samples_per_datum` prior draws is paired with every row of
/// the batch, so the estimate is an average over the full `z x batch` grid.
pub fn naive_bound_loss<'t, D, R>(
    params: &Bound<'t>,
    batch: &Tensor,
    prior: &StandardNormalPrior,
    decoder: &D,
    samples_per_datum: usize,
    rng: &mut R,
) -> Result<Var<'t>>
where
    D: ConditionalDecoder + ?Sized,
    R: Rng + ?Sized,
{
    non_empty(batch)?;
    if samples_per_datum == 0 {
        return Err(Error::invalid("samples_per_datum must be positive"));
    }
    let tape = params.tape()?;
    let b = batch.rows();
    let codes = prior.sample(samples_per_datum, rng);
    let mut x_rows = Vec::with_capacity(samples_per_datum * b);
    let mut z_rows = Vec::with_capacity(samples_per_datum * b);
    for k in 0..samples_per_datum {
        for r in 0..b {
            x_rows.push(batch.row(r).to_vec());
            z_rows.push(codes.row(k).to_vec());
        }
    }
    let tiled = Tensor::from_rows(&x_rows)?;
    let z = tape.constant(Tensor::from_rows(&z_rows)?);
    decoder.log_likelihood(params, z, &tiled)?.mean()?.neg()
}

/// Batch mean of `||g(z) - x||^2` plus `R(q)`.
///
/// `reconstruction` in the report is the negated squared error, so the
/// report's `total_loss` is the squared error plus the regularizer.
pub fn l2_reconstruction_loss<'t, E, D, R>(
    params: &Bound<'t>,
    batch: &Tensor,
    encoder: &E,
    decoder: &D,
    reg: &Regularizer,
    rng: &mut R,
) -> Result<ObjectiveReport<'t>>
where
    E: InferenceModel + ?Sized,
    D: MeanDecoder + ?Sized,
    R: Rng + ?Sized,
{
    non_empty(batch)?;
    let tape = params.tape()?;
    let x = tape.constant(batch.clone());
    let q = encoder.posterior(params, x)?;
    let z = q.reparam_sample(rng)?;
    let sq = decoder.mean(params, z)?.sub(&x)?.square()?.sum_axis(1)?.mean()?;
    let reg_term = reg.evaluate(&q)?;
    ObjectiveReport::assemble(sq.neg()?, reg_term)
}

/// `(N/2) log(pi)`: the gap between squared error and the negative
/// fixed-variance Gaussian log-likelihood.
pub fn gaussian_normalizer(n: usize) -> f64 {
    0.5 * n as f64 * PI.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamSet, Tape};
    use crate::distributions::{FactorizedBernoulli, GaussianFixedVariance};
    use crate::rng::seeded;

    /// q(z|x) = N(x W, exp(s)^2) with W, s free parameters.
    struct LinearEncoder {
        d: usize,
    }

    impl InferenceModel for LinearEncoder {
        fn latent_dim(&self) -> usize {
            self.d
        }
        fn posterior<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<DiagonalGaussian<'t>> {
            let mean = x.matmul(&p.get("w")?)?;
            let ls = mean.scale(0.0)?.add(&p.get("s")?)?;
            DiagonalGaussian::new(mean, ls)
        }
    }

    /// Gaussian decoder with mean z V + c.
    struct LinearGaussian {
        n: usize,
    }

    impl MeanDecoder for LinearGaussian {
        fn mean<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
            z.matmul(&p.get("v")?)?.add(&p.get("c")?)
        }
    }

    impl ConditionalDecoder for LinearGaussian {
        fn data_dim(&self) -> usize {
            self.n
        }
        fn log_likelihood<'t>(&self, p: &Bound<'t>, z: Var<'t>, x: &Tensor) -> Result<Var<'t>> {
            GaussianFixedVariance::new(self.mean(p, z)?).log_prob(x)
        }
    }

    /// Bernoulli decoder that ignores z entirely.
    struct ConstantBernoulli {
        n: usize,
        logit: f64,
    }

    impl ConditionalDecoder for ConstantBernoulli {
        fn data_dim(&self) -> usize {
            self.n
        }
        fn log_likelihood<'t>(&self, _p: &Bound<'t>, z: Var<'t>, x: &Tensor) -> Result<Var<'t>> {
            let logits = z.tape().constant(Tensor::full(vec![x.rows(), self.n], self.logit));
            FactorizedBernoulli::new(logits).log_prob(x)
        }
    }

    fn linear_params(n: usize, d: usize, seed: u64) -> ParamSet {
        let mut rng = seeded(seed);
        let mut p = ParamSet::new();
        p.insert("w", Tensor::randn(vec![n, d], 0.5, &mut rng));
        p.insert("s", Tensor::randn(vec![d], 0.3, &mut rng));
        p.insert("v", Tensor::randn(vec![d, n], 0.5, &mut rng));
        p.insert("c", Tensor::randn(vec![n], 0.1, &mut rng));
        p
    }

    fn batch(rows: usize, n: usize, seed: u64) -> Tensor {
        Tensor::randn(vec![rows, n], 1.0, &mut seeded(seed))
    }

    #[test]
    fn unregularized_total_is_negative_mean_loglik() {
        let p = linear_params(3, 2, 0);
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = batch(5, 3, 1);
        let r = vae_loss(&b, &x, &LinearEncoder { d: 2 }, &LinearGaussian { n: 3 }, &Regularizer::none(), &mut seeded(2)).unwrap();
        assert_eq!(r.regularizer, 0.0);
        assert_eq!(r.total_loss, -r.reconstruction);
    }

    #[test]
    fn z_blind_uniform_bernoulli() {
        let p = linear_params(4, 2, 0);
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = Tensor::from_rows(&[vec![0., 1., 1., 0.], vec![1., 1., 1., 1.]]).unwrap();
        let dec = ConstantBernoulli { n: 4, logit: 0.0 };
        let r = vae_loss(&b, &x, &LinearEncoder { d: 2 }, &dec, &Regularizer::elbo_kl(), &mut seeded(2)).unwrap();
        assert!((r.reconstruction + 4.0 * 2f64.ln()).abs() < 1e-12);
        // The naive bound sees the same z-independent decoder.
        let naive = naive_bound_loss(&b, &x, &StandardNormalPrior::new(2), &dec, 3, &mut seeded(9)).unwrap();
        assert!((naive.item().unwrap() + r.reconstruction).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_posteriors_cost_nothing() {
        let mut p = linear_params(3, 2, 4);
        p.insert("w", Tensor::zeros(vec![3, 2]));
        p.insert("s", Tensor::zeros(vec![2]));
        let x = batch(6, 3, 1);
        let run = |reg: Regularizer| {
            let tape = Tape::new();
            let b = p.bind(&tape);
            let r = vae_loss(&b, &x, &LinearEncoder { d: 2 }, &LinearGaussian { n: 3 }, &reg, &mut seeded(5)).unwrap();
            (r.total_loss, r.regularizer)
        };
        let (elbo, reg) = run(Regularizer::elbo_kl());
        let (plain, _) = run(Regularizer::none());
        assert_eq!(reg, 0.0);
        assert_eq!(elbo, plain);
    }

    #[test]
    fn elbo_regularizer_known_value() {
        let tape = Tape::new();
        let q = DiagonalGaussian::new(
            tape.constant(Tensor::matrix(1, 3, vec![2.0, 0.0, 0.0]).unwrap()),
            tape.constant(Tensor::zeros(vec![1, 3])),
        )
        .unwrap();
        assert!((elbo_regularizer(&q).unwrap().item().unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn elbo_regularizer_is_mean_of_per_datum_kl() {
        let mut rng = seeded(8);
        let mu = Tensor::randn(vec![7, 3], 1.0, &mut rng);
        let ls = Tensor::randn(vec![7, 3], 0.5, &mut rng);
        let tape = Tape::new();
        let batched = DiagonalGaussian::new(tape.constant(mu.clone()), tape.constant(ls.clone())).unwrap();
        let total = elbo_regularizer(&batched).unwrap().item().unwrap();
        let mut sum = 0.0;
        for r in 0..7 {
            let q = DiagonalGaussian::new(
                tape.constant(Tensor::vector(mu.row(r).to_vec()).unwrap()),
                tape.constant(Tensor::vector(ls.row(r).to_vec()).unwrap()),
            )
            .unwrap();
            sum += q.kl_to_standard_normal().unwrap().item().unwrap();
        }
        assert!((total - sum / 7.0).abs() < 1e-12);
    }

    #[test]
    fn l2_and_gaussian_loglik_differ_by_constant() {
        for seed in 0..10 {
            let p = linear_params(4, 2, seed);
            let x = batch(6, 4, seed + 100);
            let tape = Tape::new();
            let b = p.bind(&tape);
            let enc = LinearEncoder { d: 2 };
            let dec = LinearGaussian { n: 4 };
            let l2 = l2_reconstruction_loss(&b, &x, &enc, &dec, &Regularizer::none(), &mut seeded(seed)).unwrap();
            let ll = vae_loss(&b, &x, &enc, &dec, &Regularizer::none(), &mut seeded(seed)).unwrap();
            let sq = -l2.reconstruction;
            assert!((sq - (-ll.reconstruction - gaussian_normalizer(4))).abs() < 1e-10);
        }
    }

    #[test]
    fn l2_simple_values() {
        // g(z) = 0 against x = (1, 1) gives 2; g(z) = x gives 0.
        let mut p = linear_params(2, 1, 0);
        p.insert("v", Tensor::zeros(vec![1, 2]));
        p.insert("c", Tensor::zeros(vec![2]));
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let r = l2_reconstruction_loss(&b, &x, &LinearEncoder { d: 1 }, &LinearGaussian { n: 2 }, &Regularizer::none(), &mut seeded(0)).unwrap();
        assert!((r.total_loss - 2.0).abs() < 1e-15);

        let mut p = linear_params(2, 1, 0);
        p.insert("v", Tensor::zeros(vec![1, 2]));
        p.insert("c", Tensor::vector(vec![1.0, 1.0]).unwrap());
        let tape = Tape::new();
        let b = p.bind(&tape);
        let r = l2_reconstruction_loss(&b, &x, &LinearEncoder { d: 1 }, &LinearGaussian { n: 2 }, &Regularizer::none(), &mut seeded(0)).unwrap();
        assert_eq!(r.total_loss, 0.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let p = linear_params(2, 1, 0);
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(vae_loss(&b, &x, &LinearEncoder { d: 1 }, &LinearGaussian { n: 2 }, &Regularizer::none(), &mut seeded(0)).is_err());
    }

    #[test]
    fn regularizer_linear_in_weight() {
        let p = linear_params(3, 2, 1);
        let x = batch(4, 3, 2);
        let mut last = -1.0;
        for w in [0.0, 0.5, 1.0, 2.0] {
            let tape = Tape::new();
            let b = p.bind(&tape);
            let r = vae_loss(&b, &x, &LinearEncoder { d: 2 }, &LinearGaussian { n: 3 }, &Regularizer::elbo_kl().weighted(w), &mut seeded(3)).unwrap();
            assert!(r.regularizer >= last);
            last = r.regularizer;
        }
    }

    #[test]
    fn unregularized_encoder_gradient_equals_reconstruction_gradient() {
        let p = linear_params(3, 2, 6);
        let x = batch(4, 3, 7);
        let enc = LinearEncoder { d: 2 };
        let dec = LinearGaussian { n: 3 };

        let tape = Tape::new();
        let b = p.bind(&tape);
        let r = vae_loss(&b, &x, &enc, &dec, &Regularizer::none(), &mut seeded(3)).unwrap();
        let g1 = b.grads(&tape.backward(r.total).unwrap());

        let tape = Tape::new();
        let b = p.bind(&tape);
        let xv = tape.constant(x.clone());
        let q = enc.posterior(&b, xv).unwrap();
        let z = q.reparam_sample(&mut seeded(3)).unwrap();
        let recon = dec.log_likelihood(&b, z, &x).unwrap().mean().unwrap().neg().unwrap();
        let g2 = b.grads(&tape.backward(recon).unwrap());
        assert_eq!(g1["w"], g2["w"]);
        assert_eq!(g1["s"], g2["s"]);
    }

    #[test]
    fn elbo_matches_hand_coded_estimator() {
        let p = linear_params(3, 2, 10);
        let x = batch(5, 3, 11);
        let tape = Tape::new();
        let b = p.bind(&tape);
        let r = vae_loss(&b, &x, &LinearEncoder { d: 2 }, &LinearGaussian { n: 3 }, &Regularizer::elbo_kl(), &mut seeded(12)).unwrap();

        // Independent evaluation on plain arrays with the same noise stream.
        let w = p.get("w").unwrap();
        let s = p.get("s").unwrap().data();
        let v = p.get("v").unwrap();
        let c = p.get("c").unwrap().data();
        let eps = Tensor::randn(vec![5, 2], 1.0, &mut seeded(12));
        let mut elbo = 0.0;
        for row in 0..5 {
            let xr = x.row(row);
            let mut kl = 0.0;
            let mut z = [0.0; 2];
            for j in 0..2 {
                let mu: f64 = (0..3).map(|i| xr[i] * w.data()[i * 2 + j]).sum();
                z[j] = mu + s[j].exp() * eps.row(row)[j];
                kl += 0.5 * (mu * mu + (2.0 * s[j]).exp() - 1.0 - 2.0 * s[j]);
            }
            let mut sq = 0.0;
            for i in 0..3 {
                let g: f64 = (0..2).map(|j| z[j] * v.data()[j * 3 + i]).sum::<f64>() + c[i];
                sq += (g - xr[i]).powi(2);
            }
            let ll = -1.5 * PI.ln() - sq;
            elbo += ll - kl;
        }
        elbo /= 5.0;
        assert!((-r.total_loss - elbo).abs() < 1e-12);
    }
}
