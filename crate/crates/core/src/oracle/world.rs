use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;
const MAX_BITS: usize = 10;
const MAX_CODES: usize = 32;

/// A finite data space with an inference channel `q(z|x)`.
///
/// States are binary vectors; `p_data[k]` and `q[k]` refer to `states[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldDoc", into = "WorldDoc")]
pub struct DiscreteWorld {
    n: usize,
    m: usize,
    states: Vec<Vec<u8>>,
    p_data: Vec<f64>,
    q: Vec<Vec<f64>>,
}

/// On-disk form. `x` defaults to all `2^n` vectors in binary counting order.
#[derive(Serialize, Deserialize)]
struct WorldDoc {
    n: usize,
    m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<Vec<u8>>>,
    p_data: Vec<f64>,
    q: Vec<Vec<f64>>,
}

impl TryFrom<WorldDoc> for DiscreteWorld {
    type Error = Error;

    fn try_from(doc: WorldDoc) -> Result<Self> {
        let states = match doc.x {
            Some(x) => x,
            None => all_binary_vectors(doc.n)?,
        };
        let world = DiscreteWorld::new(states, doc.p_data, doc.q)?;
        if world.m != doc.m {
            return Err(Error::InvalidWorld(format!(
                "m = {} but q rows have {} entries",
                doc.m, world.m
            )));
        }
        Ok(world)
    }
}

impl From<DiscreteWorld> for WorldDoc {
    fn from(w: DiscreteWorld) -> Self {
        let full = all_binary_vectors(w.n).map(|all| all == w.states).unwrap_or(false);
        WorldDoc {
            n: w.n,
            m: w.m,
            x: if full { None } else { Some(w.states) },
            p_data: w.p_data,
            q: w.q,
        }
    }
}

/// All binary vectors of length `n`, first coordinate most significant.
pub fn all_binary_vectors(n: usize) -> Result<Vec<Vec<u8>>> {
    if n == 0 || n > MAX_BITS {
        return Err(Error::InvalidWorld(format!("n must be in 1..={MAX_BITS}, got {n}")));
    }
    Ok((0..1usize << n)
        .map(|k| (0..n).map(|i| ((k >> (n - 1 - i)) & 1) as u8).collect())
        .collect())
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidWorld(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidWorld(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

pub(crate) fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / s).collect()
}

impl DiscreteWorld {
    pub fn new(states: Vec<Vec<u8>>, p_data: Vec<f64>, q: Vec<Vec<f64>>) -> Result<Self> {
        let n = states.first().map(Vec::len).unwrap_or(0);
        if n == 0 || n > MAX_BITS {
            return Err(Error::InvalidWorld(format!("state length must be in 1..={MAX_BITS}")));
        }
        if states.iter().any(|s| s.len() != n || s.iter().any(|&b| b > 1)) {
            return Err(Error::InvalidWorld("states must be binary vectors of equal length".into()));
        }
        let mut sorted = states.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != states.len() {
            return Err(Error::InvalidWorld("duplicate states".into()));
        }
        if p_data.len() != states.len() || q.len() != states.len() {
            return Err(Error::InvalidWorld(format!(
                "{} states but p_data has {} entries and q has {} rows",
                states.len(),
                p_data.len(),
                q.len()
            )));
        }
        check_distribution(&p_data, "p_data")?;
        let m = q.first().map(Vec::len).unwrap_or(0);
        if m == 0 || m > MAX_CODES {
            return Err(Error::InvalidWorld(format!("m must be in 1..={MAX_CODES}, got {m}")));
        }
        for (k, row) in q.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidWorld(format!("q row {k} has {} entries, expected {m}", row.len())));
            }
            check_distribution(row, &format!("q row {k}"))?;
        }
        Ok(Self { n, m, states, p_data, q })
    }

    /// Full binary space of length `n` with the given distributions.
    pub fn over_all_vectors(n: usize, p_data: Vec<f64>, q: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(all_binary_vectors(n)?, p_data, q)
    }

    /// Random world on `{0,1}^n` with flat-Dirichlet `p_data` and rows of `q`.
    /// All probabilities are strictly positive.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self> {
        let states = all_binary_vectors(n)?;
        let p_data = dirichlet_ones(states.len(), rng);
        let q = (0..states.len()).map(|_| dirichlet_ones(m, rng)).collect();
        Self::new(states, p_data, q)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Length of each state vector.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of latent codes.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn p_data(&self) -> &[f64] {
        &self.p_data
    }

    /// Row-stochastic `|X| x m` inference matrix.
    pub fn q(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Same data distribution with a different inference matrix.
    pub fn with_q(&self, q: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.states.clone(), self.p_data.clone(), q)
    }
}

/// A world with a chain of inference matrices `q(z^(t)|x)`, all conditionally
/// independent given `x`.
#[derive(Clone, Debug)]
pub struct SequentialWorld {
    base: DiscreteWorld,
    stages: Vec<Vec<Vec<f64>>>,
}

impl SequentialWorld {
    pub fn new(base: DiscreteWorld, stages: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidWorld("sequential world needs at least one stage".into()));
        }
        for (t, stage) in stages.iter().enumerate() {
            base.with_q(stage.clone())
                .map_err(|e| Error::InvalidWorld(format!("stage {t}: {e}")))?;
        }
        Ok(Self { base, stages })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, stages: usize, rng: &mut R) -> Result<Self> {
        let base = DiscreteWorld::random(n, m, rng)?;
        let stages = (0..stages)
            .map(|_| (0..base.num_states()).map(|_| dirichlet_ones(m, rng)).collect())
            .collect();
        Self::new(base, stages)
    }

    pub fn base(&self) -> &DiscreteWorld {
        &self.base
    }

    pub fn stages(&self) -> &[Vec<Vec<f64>>] {
        &self.stages
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn binary_vectors_in_counting_order() {
        let v = all_binary_vectors(2).unwrap();
        assert_eq!(v, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let err = DiscreteWorld::over_all_vectors(1, vec![0.5, 0.5], vec![vec![0.7, 0.2], vec![1.0, 0.0]])
            .unwrap_err();
        assert!(err.to_string().contains("q row 0"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let w = DiscreteWorld::random(2, 3, &mut seeded(4)).unwrap();
        let text = w.to_json().unwrap();
        assert!(!text.contains("\"x\""));
        assert_eq!(DiscreteWorld::from_json(&text).unwrap(), w);
    }

    #[test]
    fn json_fixture_with_m_mismatch_fails() {
        let text = r#"{"n":1,"m":3,"p_data":[0.5,0.5],"q":[[1,0],[0,1]]}"#;
        assert!(DiscreteWorld::from_json(text).is_err());
    }

    #[test]
    fn random_world_is_valid_and_positive() {
        let w = DiscreteWorld::random(3, 4, &mut seeded(1)).unwrap();
        assert_eq!(w.num_states(), 8);
        assert!(w.p_data().iter().all(|&p| p > 0.0));
        assert!(w.q().iter().flatten().all(|&p| p > 0.0));
    }
}
