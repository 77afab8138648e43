use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Dims};
use crate::error::{Error, Result};
use crate::rng::seeded;

fn component_index(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("mixture weights sum to {s}, expected 1")));
    }
    WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("bad mixture weights: {e}")))
}

/// `n` i.i.d. points from a mixture of `k` axis-aligned 2-D Gaussians.
pub fn synth_mixture_2d(
    k: usize,
    means: &[[f64; 2]],
    stds: &[f64],
    weights: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 || means.len() != k || stds.len() != k || weights.len() != k {
        return Err(Error::invalid(format!(
            "mixture of {k} needs {k} means, stds and weights"
        )));
    }
    if stds.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::invalid("component stds must be non-negative"));
    }
    let pick = component_index(weights)?;
    let mut rng = seeded(seed);
    let items = (0..n)
        .map(|_| {
            let c = rng.sample(&pick);
            (0..2)
                .map(|d| means[c][d] + stds[c] * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Dataset::new(format!("mixture2d-k{k}"), items, Dims::Flat(2))
}

/// `n` i.i.d. draws from a weighted set of binary patterns.
pub fn synth_binary_patterns(
    n_dims: usize,
    patterns: &[Vec<u8>],
    weights: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if patterns.is_empty() || patterns.len() != weights.len() {
        return Err(Error::invalid("need one weight per pattern"));
    }
    if patterns.iter().any(|p| p.len() != n_dims || p.iter().any(|&b| b > 1)) {
        return Err(Error::invalid(format!("patterns must be binary of length {n_dims}")));
    }
    let pick = component_index(weights)?;
    let mut rng = seeded(seed);
    let items = (0..n)
        .map(|_| patterns[rng.sample(&pick)].iter().map(|&b| f64::from(b)).collect())
        .collect();
    Dataset::new(format!("patterns{n_dims}"), items, Dims::Flat(n_dims))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_frequencies() {
        let pats = vec![vec![0, 0, 0, 0], vec![1, 1, 1, 1]];
        let ds = synth_binary_patterns(4, &pats, &[0.5, 0.5], 10_000, 3).unwrap();
        let ones = ds.items().iter().filter(|x| x[0] == 1.0).count() as f64 / 1e4;
        assert!((ones - 0.5).abs() < 0.015, "{ones}");
        assert!(ds.is_binarized());
    }

    #[test]
    fn single_component_cloud() {
        let ds = synth_mixture_2d(1, &[[2.0, -1.0]], &[0.5], &[1.0], 20_000, 1).unwrap();
        let mx = ds.items().iter().map(|p| p[0]).sum::<f64>() / 2e4;
        let my = ds.items().iter().map(|p| p[1]).sum::<f64>() / 2e4;
        // 4 standard errors of the mean.
        assert!((mx - 2.0).abs() < 4.0 * 0.5 / 2e4f64.sqrt());
        assert!((my + 1.0).abs() < 4.0 * 0.5 / 2e4f64.sqrt());
    }

    #[test]
    fn seeded_generation_repeats() {
        let a = synth_mixture_2d(2, &[[0.0, 0.0], [3.0, 3.0]], &[1.0, 1.0], &[0.3, 0.7], 50, 9).unwrap();
        let b = synth_mixture_2d(2, &[[0.0, 0.0], [3.0, 3.0]], &[1.0, 1.0], &[0.3, 0.7], 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(synth_binary_patterns(1, &[vec![0], vec![1]], &[0.5, 0.6], 3, 0).is_err());
    }
}
