//! Property tests for the invariants of each module.

use ebdrift::conjugate_posterior::{fit_posterior, log_marginal_likelihood};
use ebdrift::diagnostics::{equivalence_ratio, invariant_density, theoretical_rate};
use ebdrift::mmle::{
    build_grid, is_grid_member, mmle_select, select_from_table, Coarsening, GridCase,
};
use ebdrift::path_stats::{log_likelihood, path_log_likelihood, random_hellinger, sufficient_stats};
use ebdrift::prior_family::{prior_log_density, solve_eps_with, HyperParam, SmallBallSampler};
use ebdrift::sde_sim::{simulate_path, wrap_to_circle, SimConfig};
use ebdrift::{PeriodicFunction, SuffStats};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn coeffs(max_j: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, 1..=max_j)
}

fn lambda() -> impl Strategy<Value = HyperParam> {
    (0.55..3.0f64, 0.1..5.0f64).prop_map(|(a, s)| HyperParam::new(a, s).unwrap())
}

/// Random stats with `G = (T/m) AᵀA` from a seeded Gaussian matrix.
fn stats_strategy(max_j: usize) -> impl Strategy<Value = SuffStats> {
    (1..=max_j, 5.0..300.0f64, any::<u64>()).prop_map(|(j, horizon, seed)| {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = ebdrift::rng::stream(seed);
        let m = j + 3;
        let a = DMatrix::from_fn(m, j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gram = (a.transpose() * &a) * (horizon / m as f64);
        let b = DVector::from_fn(j, |i, _| gram[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal));
        SuffStats::new(b, gram, horizon, 0.01).unwrap()
    })
}

fn short_path(theta: &PeriodicFunction, seed: u64) -> ebdrift::SamplePath {
    simulate_path(theta, &SimConfig::new(20.0, seed).with_dt(0.01)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quadratic_form_matches_path_functional(c in coeffs(6, 1.0), t in coeffs(6, 1.0), seed in any::<u64>()) {
        let drift = PeriodicFunction::new(c);
        let path = short_path(&drift, seed);
        let theta = PeriodicFunction::new(t);
        let stats = sufficient_stats(&path, theta.truncation()).unwrap();
        let a = log_likelihood(&theta, &stats).unwrap();
        let b = path_log_likelihood(&theta, &path);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0));
    }

    #[test]
    fn hellinger_is_gram_form(t1 in coeffs(6, 1.0), t2 in coeffs(6, 1.0), seed in any::<u64>()) {
        let path = short_path(&PeriodicFunction::new(vec![0.3, -0.2]), seed);
        let (a, b) = (PeriodicFunction::new(t1), PeriodicFunction::new(t2));
        let delta = a.sub(&b);
        let stats = sufficient_stats(&path, delta.truncation()).unwrap();
        let h = random_hellinger(&a, &b, &path);
        let form = stats.gram_form(delta.coeffs());
        prop_assert!((h * h - form).abs() <= 1e-10 * form.max(1.0));
        prop_assert_eq!(h, random_hellinger(&b, &a, &path));
        // event-E ratio reduces to the same Rayleigh quotient
        if let Some(r) = equivalence_ratio(&stats, &delta) {
            let direct = h / (stats.horizon.sqrt() * delta.l2_norm());
            prop_assert!((r - direct).abs() <= 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn gram_is_psd(c in coeffs(4, 1.0), j in 1usize..24, seed in any::<u64>()) {
        let path = short_path(&PeriodicFunction::new(c), seed);
        let stats = sufficient_stats(&path, j).unwrap();
        let eig = stats.gram.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let norm = eig.eigenvalues.amax();
        prop_assert!(min >= -1e-8 * norm);
    }

    #[test]
    fn conjugacy_and_evidence_decomposition(stats in stats_strategy(24), l in lambda(), seed in any::<u64>()) {
        let j = stats.truncation();
        let post = fit_posterior(&stats, &l).unwrap();
        let t1 = ebdrift::periodic_basis::random_function(j, 0.5, seed);
        let t2 = ebdrift::periodic_basis::random_function(j, 0.5, seed ^ 1);
        let lhs = log_likelihood(&t1, &stats).unwrap() - log_likelihood(&t2, &stats).unwrap()
            + prior_log_density(&l, &t1) - prior_log_density(&l, &t2);
        let rhs = post.log_density(&t1) - post.log_density(&t2);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

        let mean = post.mean_function();
        let decomposed = log_likelihood(&mean, &stats).unwrap() + prior_log_density(&l, &mean)
            - post.log_density(&mean);
        let log_ml = log_marginal_likelihood(&stats, &l).unwrap().log_ml;
        prop_assert!((decomposed - log_ml).abs() <= 1e-8 * log_ml.abs().max(1.0));
    }

    #[test]
    fn shrinkage_monotone_for_diagonal_gram(g in 0.1..100.0f64, b in coeffs(8, 10.0), a in 0.55..3.0f64, s1 in 0.05..5.0f64, f in 1.01..10.0f64) {
        let j = b.len();
        let stats = SuffStats::new(DVector::from_vec(b), DMatrix::identity(j, j) * g, 10.0, 0.01).unwrap();
        let m1 = fit_posterior(&stats, &HyperParam::new(a, s1).unwrap()).unwrap();
        let m2 = fit_posterior(&stats, &HyperParam::new(a, s1 * f).unwrap()).unwrap();
        for k in 0..j {
            prop_assert!(m1.mean()[k].abs() <= m2.mean()[k].abs() + 1e-15);
        }
    }

    #[test]
    fn small_ball_monotone_in_radius(l in lambda(), c in coeffs(5, 0.5), r1 in 0.01..3.0f64, dr in 0.0..2.0f64, seed in any::<u64>()) {
        let theta0 = PeriodicFunction::new(c);
        let sampler = SmallBallSampler::new(&l, &theta0, 8, 2000, seed).unwrap();
        prop_assert!(sampler.hits(r1) <= sampler.hits(r1 + dr));
        let (e1, e2) = (sampler.estimate(r1), sampler.estimate(r1 + dr));
        prop_assert!(e1.log_prob <= e2.log_prob);
    }

    #[test]
    fn eps_solver_brackets_root(c in 0.1..5.0f64, s in 0.2..5.0f64, alpha in 0.55..3.0f64, t in 5.0..500.0f64) {
        let log_ball = |r: f64| -c * (s / r).powf(1.0 / alpha);
        let eps = solve_eps_with(log_ball, t, 1.0).unwrap();
        let g = |e: f64| log_ball(e) + t * e * e;
        prop_assert!(g(2.0 * eps) > 0.0 && g(0.5 * eps) < 0.0);
        let exact = (c * s.powf(1.0 / alpha) / t).powf(alpha / (1.0 + 2.0 * alpha));
        prop_assert!((eps - exact).abs() <= 1e-6 * exact);
    }

    #[test]
    fn grid_points_are_valid_sorted_and_unique(t in 3.0..5000.0f64, a in 0.55..2.5f64, s in 0.1..3.0f64, case_ix in 0usize..3) {
        let case = [GridCase::ScaleOnly { alpha: a }, GridCase::SmoothnessOnly { s }, GridCase::Joint][case_ix];
        let Ok(grid) = build_grid(case, t, 0.05, Coarsening::Target(50)) else {
            return Ok(());
        };
        for p in &grid.points {
            prop_assert!(is_grid_member(case, t, 0.05, &p.lambda), "{:?}", p);
        }
        for w in grid.points.windows(2) {
            let (x, y) = (w[0].lambda, w[1].lambda);
            prop_assert!(x.alpha < y.alpha || (x.alpha == y.alpha && x.s < y.s));
        }
    }

    #[test]
    fn selection_shift_invariant_and_half_max(values in prop::collection::vec(-50.0..50.0f64, 1..40), shift in -100.0..100.0f64) {
        let table: Vec<(HyperParam, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (HyperParam::new(1.0, 0.1 * (i + 1) as f64).unwrap(), *v))
            .collect();
        let base = select_from_table(table.clone()).unwrap();
        let shifted = select_from_table(table.iter().map(|(l, v)| (*l, v + shift)).collect()).unwrap();
        prop_assert_eq!(base.lambda_hat, shifted.lambda_hat);
        prop_assert!(base.half_max_set.contains(&base.best_index));
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(base.table[base.best_index].1, max);
    }

    #[test]
    fn refined_grid_never_lowers_maximum(stats in stats_strategy(8), t in 20.0..400.0f64) {
        let case = GridCase::ScaleOnly { alpha: 1.0 };
        let coarse = build_grid(case, t, 0.05, Coarsening::Stride(5)).unwrap();
        let full = build_grid(case, t, 0.05, Coarsening::Full).unwrap();
        let a = mmle_select(&stats, &coarse).unwrap();
        let b = mmle_select(&stats, &full).unwrap();
        prop_assert!(b.table[b.best_index].1 >= a.table[a.best_index].1);
    }

    #[test]
    fn density_normalized_and_bounded(c in coeffs(5, 1.0)) {
        let p = invariant_density(&PeriodicFunction::new(c), 512).unwrap();
        prop_assert!((p.integral() - 1.0).abs() <= 1e-8);
        prop_assert!(p.c_rho * p.c_rho < p.min_rho() && p.max_rho() < p.big_c_rho * p.big_c_rho);
        prop_assert!(p.rho.iter().all(|r| *r > 0.0));
    }

    #[test]
    fn rate_decreasing_in_horizon_and_beta(beta in 0.1..10.0f64, t in 2.0..1e6f64, f in 1.01..10.0f64) {
        prop_assert!(theoretical_rate(beta, t * f) < theoretical_rate(beta, t));
        prop_assert!(theoretical_rate(beta * f, t) < theoretical_rate(beta, t));
    }

    #[test]
    fn wrapped_values_in_unit_interval(values in prop::collection::vec(-1e6..1e6f64, 1..50)) {
        let path = ebdrift::SamplePath::from_values(values.clone(), 1.0, (values.len() - 1).max(1) as f64, 0, "x");
        if let Ok(path) = path {
            for (w, v) in wrap_to_circle(&path).iter().zip(&values) {
                prop_assert!((0.0..1.0).contains(w));
                let k = (v - w).round();
                prop_assert!((v - w - k).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }
}
