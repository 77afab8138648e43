//! Properties that must hold for every world, model joint or input, checked
//! against the independent computations in `common`.

mod common;

use proptest::prelude::*;

use llens::autodiff::{gradient_check, Tensor};
use llens::diagnostics::{mi_estimate, spearman};
use llens::oracle::{
    check_condition_and_marginal, elbo_decomposition_check, full_table_decoder, gibbs_chain_exact, kl,
    optimal_factorized_decoder, optimal_gaussian_decoder, total_variance_law_check, unregularized_optimum_identity,
    DiscreteWorld, ModelJoint, SequentialWorld,
};
use llens::rng::seeded;
use llens::samplers::WorldEncoder;

use common::*;

fn world(n: usize, m: usize, seed: u64) -> DiscreteWorld {
    DiscreteWorld::random(n, m, &mut seeded(seed)).unwrap()
}

/// Random world with some channel entries forced to zero, so that codes can
/// be unreachable and posteriors can have holes.
fn sparse_world(n: usize, m: usize, seed: u64) -> DiscreteWorld {
    let base = world(n, m, seed);
    let q = base
        .q()
        .iter()
        .enumerate()
        .map(|(x, row)| {
            let keep = (x + seed as usize) % m;
            let kept: Vec<f64> =
                row.iter().enumerate().map(|(z, &v)| if z == keep || (z + x) % 3 == 0 { v } else { 0.0 }).collect();
            let s: f64 = kept.iter().sum();
            kept.into_iter().map(|v| v / s).collect()
        })
        .collect();
    base.with_q(q).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_optimum_is_the_posterior_mean(n in 1usize..=4, m in 1usize..=5, seed in any::<u64>()) {
        let w = sparse_world(n, m, seed);
        let opt = optimal_gaussian_decoder(&w);
        for z in 0..m {
            match (posterior(&w, z), &opt.mean_per_z[z], opt.loss_per_z[z]) {
                (Some(post), Some(mean), Some(loss)) => {
                    let truth = coordinate_means(&w, &post);
                    prop_assert!(max_abs(mean, &truth) < 1e-12);
                    prop_assert!((loss - expected_sq(&w, &post, &truth)).abs() < 1e-12);
                }
                (None, None, None) => {}
                _ => prop_assert!(false, "reachability of code {} disagrees", z),
            }
        }
    }

    #[test]
    fn factorized_optimum_beats_perturbations(n in 1usize..=4, m in 1usize..=4, seed in any::<u64>(), d in -0.2f64..0.2) {
        let w = world(n, m, seed);
        let opt = optimal_factorized_decoder(&w);
        for z in 0..m {
            let post = posterior(&w, z).unwrap();
            let p = opt.p_per_z[z].as_ref().unwrap();
            let ll = |p: &[f64]| -> f64 {
                w.states().iter().zip(&post).map(|(x, &pw)| {
                    pw * x.iter().zip(p).map(|(&b, &pi)| if b == 1 { ln0(pi) } else { ln0(1.0 - pi) }).sum::<f64>()
                }).sum()
            };
            let moved: Vec<f64> = p.iter().map(|v| (v + d).clamp(1e-9, 1.0 - 1e-9)).collect();
            prop_assert!(ll(&moved) <= opt.log_lik_per_z[z].unwrap() + 1e-12);
        }
    }

    #[test]
    fn full_table_mixture_recovers_the_data(n in 1usize..=4, m in 1usize..=5, seed in any::<u64>()) {
        let w = sparse_world(n, m, seed);
        let table = full_table_decoder(&w);
        prop_assert!(max_abs(&vec_mat(&code_marginal(&w), &table), w.p_data()) < 1e-12);
        let check = check_condition_and_marginal(&w, &table, Some(&code_marginal(&w))).unwrap();
        prop_assert!(check.matches_pdata);
        prop_assert_eq!(check.prior_matches, Some(true));
    }

    #[test]
    fn prior_gap_is_a_total_variation(n in 1usize..=3, m in 2usize..=4, seed in any::<u64>(), s2 in any::<u64>()) {
        let w = world(n, m, seed);
        let table = full_table_decoder(&w);
        let prior = world(1, m, s2).q()[0].clone();
        let check = check_condition_and_marginal(&w, &table, Some(&prior)).unwrap();
        let gap = check.prior_tv.unwrap();
        prop_assert!((0.0..=1.0).contains(&gap));
        prop_assert!((gap - tv(&vec_mat(&prior, &table), w.p_data())).abs() < 1e-12);
    }

    #[test]
    fn data_is_stationary_under_the_ideal_chain(n in 1usize..=3, m in 1usize..=4, seed in any::<u64>()) {
        let w = sparse_world(n, m, seed);
        let table = full_table_decoder(&w);
        let kernel = gibbs_kernel(&w, &table);
        prop_assert!(max_abs(&vec_mat(w.p_data(), &kernel), w.p_data()) < 1e-12);
        let chain = gibbs_chain_exact(&w, &table).unwrap();
        prop_assert_eq!(chain.ergodic, is_primitive(&kernel));
        if let Some(pi) = chain.unique_stationary() {
            prop_assert!(max_abs(pi, w.p_data()) < 1e-10);
        }
    }

    #[test]
    fn elbo_gap_terms_are_non_negative(n in 1usize..=3, m in 1usize..=4, seed in any::<u64>()) {
        let w = world(n, m, seed);
        let model = ModelJoint::random(w.num_states(), m, &mut seeded(seed ^ 1)).unwrap();
        let d = elbo_decomposition_check(&w, &model).unwrap();
        prop_assert!(d.residual < 1e-10);
        prop_assert!(d.kl_data_model >= -1e-12);
        prop_assert!(d.mean_kl_posteriors >= -1e-12);
        prop_assert!((d.kl_data_model - kl(w.p_data(), &model.marginal())).abs() < 1e-12);
        prop_assert!(d.lhs <= -entropy(w.p_data()) + 1e-12);
    }

    #[test]
    fn information_is_bounded(n in 1usize..=4, m in 1usize..=5, seed in any::<u64>()) {
        let w = sparse_world(n, m, seed);
        let id = unregularized_optimum_identity(&w);
        let mi = mutual_information(&w);
        prop_assert!((id.mi - mi).abs() < 1e-12);
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= entropy(w.p_data()).min((m as f64).ln()) + 1e-12);
        prop_assert!(id.residual < 1e-10);
    }

    #[test]
    fn revealing_a_stage_never_adds_variance(n in 1usize..=3, m in 2usize..=3, stages in 1usize..=3, seed in any::<u64>()) {
        let sw = SequentialWorld::random(n, m, stages, &mut seeded(seed)).unwrap();
        for step in total_variance_law_check(&sw) {
            prop_assert!(step.slack() >= -1e-12);
            prop_assert!(step.var_before <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn mi_estimate_respects_log_m(n in 1usize..=4, m in 1usize..=5, rows in 2usize..64, seed in any::<u64>()) {
        let w = sparse_world(n, m, seed);
        let enc = WorldEncoder::new(&w).unwrap();
        let mut rng = seeded(seed);
        let xs: Vec<Vec<f64>> = (0..rows)
            .map(|r| w.states()[(r * 7 + seed as usize) % w.num_states()].iter().map(|&b| f64::from(b)).collect())
            .collect();
        let est = mi_estimate(&enc, &Tensor::from_rows(&xs).unwrap(), &mut rng).unwrap();
        prop_assert!(est.value <= (rows as f64).ln() + 1e-12);
        prop_assert!(est.std_error >= 0.0);
    }

    #[test]
    fn spearman_ignores_monotone_maps(v in prop::collection::vec(-100.0f64..100.0, 3..40)) {
        let w: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let flipped: Vec<f64> = v.iter().map(|x| -x.exp()).collect();
        let distinct = { let mut s = v.clone(); s.sort_by(f64::total_cmp); s.windows(2).all(|p| p[0] < p[1]) };
        prop_assume!(distinct);
        prop_assert!((spearman(&v, &w).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((spearman(&v, &flipped).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn composite_gradients_match(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let a = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let b = Tensor::randn(vec![4, 2], 1.0, &mut rng);
        let err = gradient_check(
            |_, v| v[0].matmul(&v[1])?.tanh()?.softplus()?.mean(),
            &[a, b],
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-6, "{}", err);
    }
}
