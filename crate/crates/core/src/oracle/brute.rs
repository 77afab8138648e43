//! Brute-force search over decoder parameters.
//!
//! Nothing here calls into the closed-form module: posteriors are rebuilt by
//! direct enumeration and objectives are evaluated state by state.

use super::world::DiscreteWorld;

/// `q(x|z)` by enumeration, `None` if `z` has no mass.
pub fn posterior_by_enumeration(world: &DiscreteWorld, z: usize) -> Option<Vec<f64>> {
    let weights: Vec<f64> = world
        .p_data()
        .iter()
        .zip(world.q())
        .map(|(&p, row)| p * row[z])
        .collect();
    let total: f64 = weights.iter().sum();
    (total > 0.0).then(|| weights.iter().map(|w| w / total).collect())
}

/// `E_{post}[||x - mean||^2]`.
pub fn expected_squared_error(states: &[Vec<u8>], post: &[f64], mean: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, &w) in states.iter().zip(post) {
        if w == 0.0 {
            continue;
        }
        let d: f64 = x.iter().zip(mean).map(|(&b, &m)| (f64::from(b) - m).powi(2)).sum();
        acc += w * d;
    }
    acc
}

/// `E_{post}[log prod_i Bern(x_i; p_i)]`.
pub fn expected_factorized_log_lik(states: &[Vec<u8>], post: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, &w) in states.iter().zip(post) {
        if w == 0.0 {
            continue;
        }
        let ll: f64 = x
            .iter()
            .zip(p)
            .map(|(&b, &pi)| if b == 1 { pi.ln() } else { (1.0 - pi).ln() })
            .sum();
        acc += w * ll;
    }
    acc
}

#[derive(Clone, Debug)]
pub struct GridOptimum {
    pub argbest: Vec<f64>,
    pub value: f64,
    pub evaluated: usize,
}

/// Scans every point of the product grid `{0, step, 2 step, ..., 1}^n`.
fn scan(n: usize, step: f64, mut objective: impl FnMut(&[f64]) -> f64, maximize: bool) -> GridOptimum {
    let ticks = (1.0 / step).round() as usize + 1;
    let values: Vec<f64> = (0..ticks).map(|k| (k as f64 * step).min(1.0)).collect();
    let mut idx = vec![0usize; n];
    let mut point = vec![values[0]; n];
    let mut best = GridOptimum {
        argbest: point.clone(),
        value: if maximize { f64::NEG_INFINITY } else { f64::INFINITY },
        evaluated: 0,
    };
    loop {
        let v = objective(&point);
        best.evaluated += 1;
        let better = if maximize { v > best.value } else { v < best.value };
        if better {
            best.value = v;
            best.argbest.copy_from_slice(&point);
        }
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < ticks {
                point[i] = values[idx[i]];
                break;
            }
            idx[i] = 0;
            point[i] = values[0];
        }
    }
}

/// Mean minimizing the expected squared error for code `z`.
pub fn grid_search_gaussian(world: &DiscreteWorld, z: usize, step: f64) -> Option<GridOptimum> {
    let post = posterior_by_enumeration(world, z)?;
    let states = world.states();
    Some(scan(world.n(), step, |m| expected_squared_error(states, &post, m), false))
}

/// Bernoulli parameters maximizing the expected log-likelihood for code `z`.
pub fn grid_search_factorized(world: &DiscreteWorld, z: usize, step: f64) -> Option<GridOptimum> {
    let post = posterior_by_enumeration(world, z)?;
    let states = world.states();
    Some(scan(world.n(), step, |p| expected_factorized_log_lik(states, &post, p), true))
}
