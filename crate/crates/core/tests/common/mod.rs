//! Independent reference computations for the integration tests. Nothing in
//! here calls the library's closed forms; every quantity is rebuilt from the
//! world's tables by direct summation.

#![allow(dead_code)]

use llens::oracle::DiscreteWorld;

pub fn ln0(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        0.0
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * ln0(v)).sum::<f64>()
}

pub fn bernoulli_entropy(p: f64) -> f64 {
    entropy(&[p, 1.0 - p])
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `q(z) = sum_x p(x) q(z|x)`.
pub fn code_marginal(w: &DiscreteWorld) -> Vec<f64> {
    let mut qz = vec![0.0; w.m()];
    for (p, row) in w.p_data().iter().zip(w.q()) {
        for (z, v) in row.iter().enumerate() {
            qz[z] += p * v;
        }
    }
    qz
}

/// `q(x|z)` as a vector over states, `None` when `q(z) = 0`.
pub fn posterior(w: &DiscreteWorld, z: usize) -> Option<Vec<f64>> {
    let joint: Vec<f64> = w.p_data().iter().zip(w.q()).map(|(p, row)| p * row[z]).collect();
    let mass: f64 = joint.iter().sum();
    (mass > 0.0).then(|| joint.into_iter().map(|v| v / mass).collect())
}

/// `E[x_i]` under a distribution over the world's states.
pub fn coordinate_means(w: &DiscreteWorld, dist: &[f64]) -> Vec<f64> {
    (0..w.n())
        .map(|i| w.states().iter().zip(dist).map(|(x, p)| p * f64::from(x[i])).sum())
        .collect()
}

/// `E||x - c||^2` under `dist`.
pub fn expected_sq(w: &DiscreteWorld, dist: &[f64], c: &[f64]) -> f64 {
    w.states()
        .iter()
        .zip(dist)
        .map(|(x, p)| p * x.iter().zip(c).map(|(&b, m)| (f64::from(b) - m).powi(2)).sum::<f64>())
        .sum()
}

/// `I(x; z)` for the world's joint.
pub fn mutual_information(w: &DiscreteWorld) -> f64 {
    let qz = code_marginal(w);
    let mut mi = 0.0;
    for (p, row) in w.p_data().iter().zip(w.q()) {
        for (z, &v) in row.iter().enumerate() {
            if p * v > 0.0 {
                mi += p * v * (v / qz[z]).ln();
            }
        }
    }
    mi
}

/// `K[x][x'] = sum_z q(z|x) d[z][x']`.
pub fn gibbs_kernel(w: &DiscreteWorld, decoder: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = w.num_states();
    (0..k)
        .map(|x| {
            (0..k)
                .map(|y| w.q()[x].iter().zip(decoder).map(|(qz, d)| qz * d[y]).sum())
                .collect()
        })
        .collect()
}

/// Primitive-matrix test: some power up to Wielandt's bound is entrywise positive.
pub fn is_primitive(kernel: &[Vec<f64>]) -> bool {
    let k = kernel.len();
    let pattern: Vec<Vec<bool>> = kernel.iter().map(|r| r.iter().map(|&v| v > 0.0).collect()).collect();
    let mut power = pattern.clone();
    for _ in 0..(k - 1) * (k - 1) + 1 {
        if power.iter().all(|r| r.iter().all(|&b| b)) {
            return true;
        }
        power = (0..k)
            .map(|i| (0..k).map(|j| (0..k).any(|l| power[i][l] && pattern[l][j])).collect())
            .collect();
    }
    false
}

pub fn vec_mat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    (0..m[0].len()).map(|j| v.iter().zip(m).map(|(a, row)| a * row[j]).sum()).collect()
}
