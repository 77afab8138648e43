//! Closed-form optima and marginals for a [`DiscreteWorld`].

use serde::{Deserialize, Serialize};

use super::world::DiscreteWorld;
use crate::error::{Error, Result};

/// Entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `KL(p || q)`. Returns `+inf` when `p` puts mass where `q` has none.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// The joint `q(x, z) = p_data(x) q(z|x)` and what follows from it.
#[derive(Clone, Debug)]
pub struct Joint {
    /// `|X| x m`.
    pub q_xz: Vec<Vec<f64>>,
    pub q_z: Vec<f64>,
    /// `q(x|z)` as a distribution over states, `None` where `q(z) = 0`.
    pub q_x_given_z: Vec<Option<Vec<f64>>>,
}

impl Joint {
    pub fn is_reachable(&self, z: usize) -> bool {
        self.q_x_given_z[z].is_some()
    }

    pub fn posterior(&self, z: usize) -> Option<&[f64]> {
        self.q_x_given_z[z].as_deref()
    }
}

pub fn derive_joint(world: &DiscreteWorld) -> Joint {
    let m = world.m();
    let q_xz: Vec<Vec<f64>> = world
        .p_data()
        .iter()
        .zip(world.q())
        .map(|(&p, row)| row.iter().map(|&q| p * q).collect())
        .collect();
    let q_z: Vec<f64> = (0..m).map(|z| q_xz.iter().map(|r| r[z]).sum()).collect();
    let q_x_given_z = (0..m)
        .map(|z| {
            (q_z[z] > 0.0).then(|| q_xz.iter().map(|r| r[z] / q_z[z]).collect())
        })
        .collect();
    Joint { q_xz, q_z, q_x_given_z }
}

/// Per-coordinate mean and variance of a distribution over the world's states.
fn moments(world: &DiscreteWorld, dist: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = world.n();
    let mut mean = vec![0.0; n];
    for (x, &w) in world.states().iter().zip(dist) {
        for i in 0..n {
            mean[i] += w * f64::from(x[i]);
        }
    }
    // Binary coordinates: Var = m (1 - m).
    let var = mean.iter().map(|&m| m * (1.0 - m)).collect();
    (mean, var)
}

#[derive(Clone, Debug)]
pub struct GaussianOptimum {
    /// `E_{q(x|z)}[x]`.
    pub mean_per_z: Vec<Option<Vec<f64>>>,
    /// Expected squared error at the optimum, `sum_i Var_{q(x|z)}[x_i]`.
    pub loss_per_z: Vec<Option<f64>>,
}

pub fn optimal_gaussian_decoder(world: &DiscreteWorld) -> GaussianOptimum {
    let joint = derive_joint(world);
    let (mean_per_z, loss_per_z) = joint
        .q_x_given_z
        .iter()
        .map(|post| match post {
            Some(p) => {
                let (mean, var) = moments(world, p);
                (Some(mean), Some(var.iter().sum()))
            }
            None => (None, None),
        })
        .unzip();
    GaussianOptimum { mean_per_z, loss_per_z }
}

#[derive(Clone, Debug)]
pub struct FactorizedOptimum {
    /// `q(x_i = 1 | z)`.
    pub p_per_z: Vec<Option<Vec<f64>>>,
    /// Achieved expected log-likelihood, `-sum_i H(q(x_i|z))`.
    pub log_lik_per_z: Vec<Option<f64>>,
}

pub fn optimal_factorized_decoder(world: &DiscreteWorld) -> FactorizedOptimum {
    let joint = derive_joint(world);
    let (p_per_z, log_lik_per_z) = joint
        .q_x_given_z
        .iter()
        .map(|post| match post {
            Some(p) => {
                let (marg, _) = moments(world, p);
                let ll = -marg.iter().map(|&m| entropy(&[m, 1.0 - m])).sum::<f64>();
                (Some(marg), Some(ll))
            }
            None => (None, None),
        })
        .unzip();
    FactorizedOptimum { p_per_z, log_lik_per_z }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderFamily {
    GaussianFixedVar,
    FactorizedBernoulli,
    FullTable,
}

/// A single decoder distribution from one of the oracle families.
#[derive(Clone, Debug, PartialEq)]
pub enum Member {
    GaussianMean(Vec<f64>),
    Bernoulli(Vec<f64>),
    Table(Vec<f64>),
}

impl Member {
    /// Probability of each world state. Gaussian members have no mass function
    /// on a discrete space.
    pub fn pmf(&self, world: &DiscreteWorld) -> Result<Vec<f64>> {
        match self {
            Member::Table(t) => Ok(t.clone()),
            Member::Bernoulli(p) => Ok(world
                .states()
                .iter()
                .map(|x| {
                    x.iter()
                        .zip(p)
                        .map(|(&b, &pi)| if b == 1 { pi } else { 1.0 - pi })
                        .product()
                })
                .collect()),
            Member::GaussianMean(_) => Err(Error::invalid(
                "a fixed-variance Gaussian has no mass function over binary states",
            )),
        }
    }
}

fn member_for(world: &DiscreteWorld, family: DecoderFamily, dist: &[f64]) -> Member {
    match family {
        DecoderFamily::FullTable => Member::Table(dist.to_vec()),
        DecoderFamily::GaussianFixedVar => Member::GaussianMean(moments(world, dist).0),
        DecoderFamily::FactorizedBernoulli => Member::Bernoulli(moments(world, dist).0),
    }
}

/// Maximizer of `E_{q(x|z)}[log p(x)]` over the family, per reachable `z`.
pub fn best_member_per_z(world: &DiscreteWorld, family: DecoderFamily) -> Vec<Option<Member>> {
    derive_joint(world)
        .q_x_given_z
        .iter()
        .map(|post| post.as_ref().map(|p| member_for(world, family, p)))
        .collect()
}

/// The naive prior-sampled bound fits `p_data` itself, so its optimum is a
/// single member shared by every `z`.
pub fn naive_best_member(world: &DiscreteWorld, family: DecoderFamily) -> Member {
    member_for(world, family, world.p_data())
}

/// Full-table optimal decoder as a dense table. Unreachable codes get the
/// uniform distribution; they carry no mass under `q(z)`.
pub fn full_table_decoder(world: &DiscreteWorld) -> Vec<Vec<f64>> {
    let k = world.num_states();
    derive_joint(world)
        .q_x_given_z
        .into_iter()
        .map(|post| post.unwrap_or_else(|| vec![1.0 / k as f64; k]))
        .collect()
}

/// Whether `q(x|z)` is exactly representable in the family, per `z`.
/// Unreachable codes are vacuously representable.
pub fn posterior_in_family(world: &DiscreteWorld, family: DecoderFamily, tol: f64) -> Vec<bool> {
    let joint = derive_joint(world);
    joint
        .q_x_given_z
        .iter()
        .map(|post| match (post, family) {
            (None, _) => true,
            (Some(_), DecoderFamily::FullTable) => true,
            (Some(_), DecoderFamily::GaussianFixedVar) => false,
            (Some(p), DecoderFamily::FactorizedBernoulli) => {
                let member = member_for(world, family, p);
                let pmf = member.pmf(world).expect("bernoulli has a pmf");
                pmf.iter().zip(p).all(|(a, b)| (a - b).abs() <= tol)
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MarginalCheck {
    /// `decoder[z] == q(x|z)` within tolerance, per `z` (vacuous if unreachable).
    pub posterior_in_family: Vec<bool>,
    /// `sum_z q(z) p(x|z)`.
    pub mixture_marginal: Vec<f64>,
    pub mixture_tv: f64,
    pub matches_pdata: bool,
    /// `sum_z p(z) p(x|z)` for the supplied prior.
    pub prior_mixture: Option<Vec<f64>>,
    pub prior_tv: Option<f64>,
    pub prior_matches: Option<bool>,
}

pub const MARGINAL_TOL: f64 = 1e-10;

/// Mixes the decoder table under `q(z)` and, optionally, under a prior.
pub fn check_condition_and_marginal(
    world: &DiscreteWorld,
    decoder: &[Vec<f64>],
    prior: Option<&[f64]>,
) -> Result<MarginalCheck> {
    let k = world.num_states();
    if decoder.len() != world.m() || decoder.iter().any(|d| d.len() != k) {
        return Err(Error::invalid(format!(
            "decoder table must be {} x {k}",
            world.m()
        )));
    }
    let joint = derive_joint(world);
    let mix = |weights: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|x| weights.iter().zip(decoder).map(|(&w, d)| w * d[x]).sum())
            .collect()
    };
    let posterior_in_family = (0..world.m())
        .map(|z| match joint.posterior(z) {
            None => true,
            Some(p) => p.iter().zip(&decoder[z]).all(|(a, b)| (a - b).abs() <= MARGINAL_TOL),
        })
        .collect();
    let mixture_marginal = mix(&joint.q_z);
    let mixture_tv = total_variation(&mixture_marginal, world.p_data());
    let max_dev = |m: &[f64]| {
        m.iter()
            .zip(world.p_data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let matches_pdata = max_dev(&mixture_marginal) <= MARGINAL_TOL;
    let (prior_mixture, prior_tv, prior_matches) = match prior {
        None => (None, None, None),
        Some(p) => {
            if p.len() != world.m() {
                return Err(Error::invalid(format!(
                    "prior has {} entries, expected {}",
                    p.len(),
                    world.m()
                )));
            }
            let pm = mix(p);
            let tv = total_variation(&pm, world.p_data());
            let ok = max_dev(&pm) <= MARGINAL_TOL;
            (Some(pm), Some(tv), Some(ok))
        }
    };
    Ok(MarginalCheck {
        posterior_in_family,
        mixture_marginal,
        mixture_tv,
        matches_pdata,
        prior_mixture,
        prior_tv,
        prior_matches,
    })
}
