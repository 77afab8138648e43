//! The exact Gibbs chain `x -> z ~ q(z|x) -> x' ~ p(x'|z)` on a finite world.

use super::world::DiscreteWorld;
use crate::error::{Error, Result};

pub const STATIONARY_TOL: f64 = 1e-12;
pub const MAX_POWER_ITERATIONS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct GibbsChain {
    /// `transition[x][x']`.
    pub transition: Vec<Vec<f64>>,
    /// One stationary distribution per recurrent class. Each is a full-length
    /// vector over states, zero outside its class.
    pub stationary: Vec<Vec<f64>>,
    /// Recurrent classes as sorted state indices, aligned with `stationary`.
    pub recurrent_classes: Vec<Vec<usize>>,
    pub irreducible: bool,
    pub period: usize,
    pub ergodic: bool,
    /// Largest iteration count used by power iteration over all classes.
    pub iterations: usize,
    pub converged: bool,
}

impl GibbsChain {
    /// The unique stationary distribution, if the chain is ergodic.
    pub fn unique_stationary(&self) -> Option<&[f64]> {
        self.ergodic.then(|| self.stationary[0].as_slice())
    }
}

/// `T[x][x'] = sum_z q(z|x) decoder[z][x']`.
pub fn transition_matrix(world: &DiscreteWorld, decoder: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = world.num_states();
    if decoder.len() != world.m() || decoder.iter().any(|d| d.len() != k) {
        return Err(Error::invalid(format!("decoder table must be {} x {k}", world.m())));
    }
    for (z, d) in decoder.iter().enumerate() {
        let s: f64 = d.iter().sum();
        if d.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("decoder row {z} is not a distribution")));
        }
    }
    Ok(world
        .q()
        .iter()
        .map(|q_row| {
            (0..k)
                .map(|x2| q_row.iter().zip(decoder).map(|(&q, d)| q * d[x2]).sum())
                .collect()
        })
        .collect())
}

/// Strongly connected components of the support graph (Kosaraju).
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let k = adj.len();
    let mut order = Vec::with_capacity(k);
    let mut seen = vec![false; k];
    for s in 0..k {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![(s, 0usize)];
        while let Some((v, i)) = stack.pop() {
            if i < adj[v].len() {
                stack.push((v, i + 1));
                let w = adj[v][i];
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
            }
        }
    }
    let mut radj = vec![Vec::new(); k];
    for (v, out) in adj.iter().enumerate() {
        for &w in out {
            radj[w].push(v);
        }
    }
    let mut comp = vec![usize::MAX; k];
    let mut comps = Vec::new();
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![s];
        comp[s] = id;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &radj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = id;
                    members.push(w);
                    stack.push(w);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of a strongly connected class: gcd of `level(u) + 1 - level(v)`
/// over its edges, with BFS levels from the first member.
fn period(adj: &[Vec<usize>], class: &[usize]) -> usize {
    let k = adj.len();
    let mut in_class = vec![false; k];
    for &v in class {
        in_class[v] = true;
    }
    let mut level = vec![usize::MAX; k];
    level[class[0]] = 0;
    let mut queue = std::collections::VecDeque::from([class[0]]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if in_class[w] && level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let mut g = 0;
    for &v in class {
        for &w in &adj[v] {
            if in_class[w] {
                g = gcd(g, (level[v] + 1).abs_diff(level[w]));
            }
        }
    }
    g
}

/// Power iteration on the lazy chain `(T + I) / 2`, which shares `T`'s
/// stationary distribution and avoids oscillation on periodic classes.
fn power_iterate(t: &[Vec<f64>], class: &[usize]) -> (Vec<f64>, usize, bool) {
    let k = t.len();
    let mut pi = vec![0.0; k];
    for &v in class {
        pi[v] = 1.0 / class.len() as f64;
    }
    for it in 1..=MAX_POWER_ITERATIONS {
        let mut next = vec![0.0; k];
        for &x in class {
            let w = pi[x];
            if w == 0.0 {
                continue;
            }
            next[x] += 0.5 * w;
            for &x2 in class {
                next[x2] += 0.5 * w * t[x][x2];
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < STATIONARY_TOL {
            return (pi, it, true);
        }
    }
    (pi, MAX_POWER_ITERATIONS, false)
}

/// Builds the transition matrix, classifies the chain and finds its
/// stationary distribution(s).
pub fn gibbs_chain_exact(world: &DiscreteWorld, decoder: &[Vec<f64>]) -> Result<GibbsChain> {
    let transition = transition_matrix(world, decoder)?;
    let adj: Vec<Vec<usize>> = transition
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, _)| j).collect())
        .collect();
    let comps = strongly_connected(&adj);
    let mut comp_of = vec![0; adj.len()];
    for (c, members) in comps.iter().enumerate() {
        for &v in members {
            comp_of[v] = c;
        }
    }
    let mut recurrent_classes: Vec<Vec<usize>> = comps
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|&v| adj[v].iter().all(|&w| comp_of[w] == *c))
        })
        .map(|(_, m)| m.clone())
        .collect();
    recurrent_classes.sort();
    let irreducible = comps.len() == 1;
    let period = if irreducible { period(&adj, &comps[0]) } else { 0 };
    let ergodic = irreducible && period == 1;

    let mut stationary = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for class in &recurrent_classes {
        let (pi, it, ok) = power_iterate(&transition, class);
        stationary.push(pi);
        iterations = iterations.max(it);
        converged &= ok;
    }
    Ok(GibbsChain {
        transition,
        stationary,
        recurrent_classes,
        irreducible,
        period,
        ergodic,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::analytic::full_table_decoder;
    use crate::rng::seeded;

    #[test]
    fn single_code_mixes_in_one_step() {
        let w = DiscreteWorld::random(2, 1, &mut seeded(6)).unwrap();
        let chain = gibbs_chain_exact(&w, &full_table_decoder(&w)).unwrap();
        for row in &chain.transition {
            for (a, b) in row.iter().zip(w.p_data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(chain.ergodic);
    }

    #[test]
    fn block_code_is_reducible() {
        let q = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let w = DiscreteWorld::over_all_vectors(2, vec![0.25; 4], q).unwrap();
        let chain = gibbs_chain_exact(&w, &full_table_decoder(&w)).unwrap();
        assert!(!chain.ergodic && !chain.irreducible);
        assert_eq!(chain.recurrent_classes, vec![vec![0, 1], vec![2, 3]]);
        assert!((chain.stationary[0][0] - 0.5).abs() < 1e-12);
        assert!(chain.unique_stationary().is_none());
    }

    #[test]
    fn two_cycle_has_period_two() {
        // x flips deterministically through the code.
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let w = DiscreteWorld::over_all_vectors(1, vec![0.5, 0.5], q).unwrap();
        let dec = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let chain = gibbs_chain_exact(&w, &dec).unwrap();
        assert!(chain.irreducible);
        assert_eq!(chain.period, 2);
        assert!(!chain.ergodic);
        assert!(chain.converged);
        assert!((chain.stationary[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_decoder() {
        let w = DiscreteWorld::random(1, 2, &mut seeded(1)).unwrap();
        assert!(gibbs_chain_exact(&w, &[vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
    }
}
