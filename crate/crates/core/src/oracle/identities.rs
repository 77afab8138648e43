//! Exact information-theoretic identities checked by enumeration.

use rand::Rng;
use rand_distr::Exp1;

use super::analytic::{derive_joint, entropy, kl};
use super::world::{DiscreteWorld, SequentialWorld};
use crate::error::{Error, Result};

/// A model joint `p(x, z)` over the world's states and codes.
#[derive(Clone, Debug)]
pub struct ModelJoint {
    table: Vec<Vec<f64>>,
}

impl ModelJoint {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let m = table.first().map(Vec::len).unwrap_or(0);
        if m == 0 || table.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("model joint must be a non-empty rectangular table"));
        }
        if table.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("model joint has negative or non-finite entries"));
        }
        let s: f64 = table.iter().flatten().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("model joint sums to {s}")));
        }
        Ok(Self { table })
    }

    /// `p(z) p(x|z)` from a prior and a per-code decoder table `decoder[z][x]`.
    pub fn from_prior_decoder(prior: &[f64], decoder: &[Vec<f64>]) -> Result<Self> {
        let k = decoder.first().map(Vec::len).unwrap_or(0);
        let table = (0..k)
            .map(|x| prior.iter().zip(decoder).map(|(&p, d)| p * d[x]).collect())
            .collect();
        Self::new(table)
    }

    /// Strictly positive random joint of size `states x m`.
    pub fn random<R: Rng + ?Sized>(states: usize, m: usize, rng: &mut R) -> Result<Self> {
        let raw: Vec<Vec<f64>> = (0..states)
            .map(|_| (0..m).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect())
            .collect();
        let s: f64 = raw.iter().flatten().sum();
        Self::new(raw.into_iter().map(|r| r.into_iter().map(|v| v / s).collect()).collect())
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn prior(&self) -> Vec<f64> {
        let m = self.table[0].len();
        (0..m).map(|z| self.table.iter().map(|r| r[z]).sum()).collect()
    }

    pub fn marginal(&self) -> Vec<f64> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ElboDecomposition {
    /// `E_{p_data}[E_q log p(x|z) - KL(q(z|x) || p(z))]`.
    pub lhs: f64,
    pub neg_entropy_pdata: f64,
    /// `KL(p_data || p(x))`.
    pub kl_data_model: f64,
    /// `E_{p_data}[KL(q(z|x) || p(z|x))]`.
    pub mean_kl_posteriors: f64,
    /// `-H(p_data) - kl_data_model - mean_kl_posteriors`.
    pub rhs: f64,
    pub residual: f64,
}

/// Evaluates the ELBO directly and as a sum of two divergences.
///
/// Both sides are infinite when the model assigns zero mass where `q` does not;
/// the residual is then reported as `NaN`.
pub fn elbo_decomposition_check(world: &DiscreteWorld, model: &ModelJoint) -> Result<ElboDecomposition> {
    let table = model.table();
    if table.len() != world.num_states() || table[0].len() != world.m() {
        return Err(Error::invalid(format!(
            "model joint is {}x{}, world needs {}x{}",
            table.len(),
            table[0].len(),
            world.num_states(),
            world.m()
        )));
    }
    let p_z = model.prior();
    let p_x = model.marginal();

    let mut lhs = 0.0;
    for (x, (&pd, q_row)) in world.p_data().iter().zip(world.q()).enumerate() {
        if pd == 0.0 {
            continue;
        }
        let mut recon = 0.0;
        for (z, &qz) in q_row.iter().enumerate() {
            if qz > 0.0 {
                let p_x_given_z = if p_z[z] > 0.0 { table[x][z] / p_z[z] } else { 0.0 };
                recon += qz * p_x_given_z.ln();
            }
        }
        lhs += pd * (recon - kl(q_row, &p_z));
    }

    let neg_entropy_pdata = -entropy(world.p_data());
    let kl_data_model = kl(world.p_data(), &p_x);
    let mut mean_kl_posteriors = 0.0;
    for (x, (&pd, q_row)) in world.p_data().iter().zip(world.q()).enumerate() {
        if pd == 0.0 {
            continue;
        }
        let post: Vec<f64> = if p_x[x] > 0.0 {
            table[x].iter().map(|&v| v / p_x[x]).collect()
        } else {
            vec![0.0; world.m()]
        };
        mean_kl_posteriors += pd * kl(q_row, &post);
    }
    let rhs = neg_entropy_pdata - kl_data_model - mean_kl_posteriors;
    let residual = if lhs.is_finite() && rhs.is_finite() {
        (lhs - rhs).abs()
    } else {
        f64::NAN
    };
    Ok(ElboDecomposition {
        lhs,
        neg_entropy_pdata,
        kl_data_model,
        mean_kl_posteriors,
        rhs,
        residual,
    })
}

#[derive(Clone, Debug)]
pub struct UnregularizedIdentity {
    /// `E_{q(x,z)}[log q(x|z)]`.
    pub objective_at_opt: f64,
    pub mi: f64,
    pub entropy_pdata: f64,
    pub residual: f64,
}

/// Mutual information `I_q(x; z)` of the world's joint.
pub fn mutual_information(world: &DiscreteWorld) -> f64 {
    let joint = derive_joint(world);
    let mut mi = 0.0;
    for (row, &pd) in joint.q_xz.iter().zip(world.p_data()) {
        for (&v, &qz) in row.iter().zip(&joint.q_z) {
            if v > 0.0 {
                mi += v * (v / (pd * qz)).ln();
            }
        }
    }
    mi
}

/// Checks `E_q[log q(x|z)] = I_q(x; z) - H(p_data)` at the full-table optimum.
pub fn unregularized_optimum_identity(world: &DiscreteWorld) -> UnregularizedIdentity {
    let joint = derive_joint(world);
    let mut objective = 0.0;
    for (x, row) in joint.q_xz.iter().enumerate() {
        for (z, &v) in row.iter().enumerate() {
            if v > 0.0 {
                let post = joint.q_x_given_z[z].as_ref().expect("reachable");
                objective += v * post[x].ln();
            }
        }
    }
    let mi = mutual_information(world);
    let h = entropy(world.p_data());
    UnregularizedIdentity {
        objective_at_opt: objective,
        mi,
        entropy_pdata: h,
        residual: (objective - (mi - h)).abs(),
    }
}

/// One row of the total-variance table.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceStep {
    /// Index of the newly revealed stage.
    pub stage: usize,
    /// Codes of stages `0..stage`.
    pub prefix: Vec<usize>,
    pub coordinate: usize,
    /// `Var_{q(x|prefix)}[x_i]`.
    pub var_before: f64,
    /// `E_{q(z^(t)|prefix)}[Var_{q(x|prefix, z^(t))}[x_i]]`.
    pub expected_var_after: f64,
}

impl VarianceStep {
    pub fn slack(&self) -> f64 {
        self.var_before - self.expected_var_after
    }
}

fn coordinate_variance(states: &[Vec<u8>], weights: &[f64], mass: f64, i: usize) -> f64 {
    let mean: f64 = states
        .iter()
        .zip(weights)
        .map(|(x, &w)| w * f64::from(x[i]))
        .sum::<f64>()
        / mass;
    states
        .iter()
        .zip(weights)
        .map(|(x, &w)| w * (f64::from(x[i]) - mean).powi(2))
        .sum::<f64>()
        / mass
}

/// Tabulates the law-of-total-variance step for every positive-mass prefix,
/// stage and coordinate.
pub fn total_variance_law_check(world: &SequentialWorld) -> Vec<VarianceStep> {
    let base = world.base();
    let states = base.states();
    let mut out = Vec::new();
    // (prefix, unnormalized weights over x)
    let mut frontier: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), base.p_data().to_vec())];
    for (t, stage) in world.stages().iter().enumerate() {
        let m = stage[0].len();
        let mut next = Vec::new();
        for (prefix, w) in &frontier {
            let mass: f64 = w.iter().sum();
            let children: Vec<(usize, Vec<f64>, f64)> = (0..m)
                .map(|z| {
                    let cw: Vec<f64> = w.iter().zip(stage).map(|(&a, row)| a * row[z]).collect();
                    let cm = cw.iter().sum();
                    (z, cw, cm)
                })
                .filter(|(_, _, cm)| *cm > 0.0)
                .collect();
            for i in 0..base.n() {
                let var_before = coordinate_variance(states, w, mass, i);
                let expected_var_after = children
                    .iter()
                    .map(|(_, cw, cm)| cm / mass * coordinate_variance(states, cw, *cm, i))
                    .sum();
                out.push(VarianceStep {
                    stage: t,
                    prefix: prefix.clone(),
                    coordinate: i,
                    var_before,
                    expected_var_after,
                });
            }
            for (z, cw, _) in children {
                let mut p = prefix.clone();
                p.push(z);
                next.push((p, cw));
            }
        }
        frontier = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_code_identity() {
        let w = DiscreteWorld::random(3, 1, &mut seeded(5)).unwrap();
        let r = unregularized_optimum_identity(&w);
        assert!(r.mi.abs() < 1e-15);
        assert!((r.objective_at_opt + r.entropy_pdata).abs() < 1e-12);
    }

    #[test]
    fn bijective_code_identity() {
        let q: Vec<Vec<f64>> = (0..4).map(|k| (0..4).map(|z| f64::from(u8::from(z == k))).collect()).collect();
        let w = DiscreteWorld::over_all_vectors(2, vec![0.1, 0.2, 0.3, 0.4], q).unwrap();
        let r = unregularized_optimum_identity(&w);
        assert!(r.objective_at_opt.abs() < 1e-15);
        assert!((r.mi - r.entropy_pdata).abs() < 1e-12);
    }

    #[test]
    fn non_informative_optimum_has_no_posterior_gap() {
        // q(z|x) = p(z), p(x|z) = p_data(x).
        let prior = vec![0.3, 0.7];
        let w = DiscreteWorld::over_all_vectors(2, vec![0.1, 0.2, 0.3, 0.4], vec![prior.clone(); 4]).unwrap();
        let dec = vec![w.p_data().to_vec(); 2];
        let model = ModelJoint::from_prior_decoder(&prior, &dec).unwrap();
        let d = elbo_decomposition_check(&w, &model).unwrap();
        assert!(d.kl_data_model.abs() < 1e-15);
        assert!(d.mean_kl_posteriors.abs() < 1e-15);
        assert!((d.lhs + entropy(w.p_data())).abs() < 1e-12);
    }

    #[test]
    fn model_equal_to_q_joint() {
        let w = DiscreteWorld::random(2, 3, &mut seeded(8)).unwrap();
        let joint = derive_joint(&w);
        let model = ModelJoint::new(joint.q_xz.clone()).unwrap();
        let d = elbo_decomposition_check(&w, &model).unwrap();
        assert!(d.kl_data_model.abs() < 1e-14);
        assert!(d.mean_kl_posteriors.abs() < 1e-14);
        assert!((d.lhs + entropy(w.p_data())).abs() < 1e-12);
        assert!(d.residual < 1e-12);
    }

    #[test]
    fn uninformative_stage_keeps_variance() {
        let base = DiscreteWorld::random(2, 2, &mut seeded(3)).unwrap();
        let uniform = vec![vec![0.5, 0.5]; 4];
        let sw = SequentialWorld::new(base, vec![uniform]).unwrap();
        for step in total_variance_law_check(&sw) {
            assert!(step.slack().abs() < 1e-15);
        }
    }

    #[test]
    fn revealing_bit_zeroes_its_variance() {
        let base = DiscreteWorld::random(2, 2, &mut seeded(3)).unwrap();
        let reveal_first = base.states().iter().map(|x| if x[0] == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let sw = SequentialWorld::new(base, vec![reveal_first]).unwrap();
        let steps = total_variance_law_check(&sw);
        let bit0 = steps.iter().find(|s| s.coordinate == 0).unwrap();
        assert!(bit0.var_before > 0.0);
        assert!(bit0.expected_var_after.abs() < 1e-15);
    }
}
