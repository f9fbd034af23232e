use ebdrift::io::{load_path, load_stats, save_path, save_stats};
use ebdrift::rng::substream_seed;
use ebdrift::{
    build_grid, empirical_posterior, l2_distance, make_sobolev_truth, mmle_select, optimal_scale,
    simulate_path, sufficient_stats, Coarsening, GridCase, SimConfig, SmoothnessSpec,
};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn simulate_store_reload_select() {
    let dir = tempfile::tempdir().unwrap();
    let truth = make_sobolev_truth(&SmoothnessSpec::deterministic(1.0), 64).unwrap();
    let path = simulate_path(&truth, &SimConfig::new(500.0, 11).with_dt(0.01)).unwrap();

    for ext in ["bin", "csv"] {
        let file = dir.path().join(format!("path.{ext}"));
        save_path(&path, &file).unwrap();
        let back = load_path(&file).unwrap();
        assert_eq!(back.values, path.values);
    }

    let stats = sufficient_stats(&path, 32).unwrap();
    let grid = build_grid(GridCase::SmoothnessOnly { s: 1.0 }, 500.0, 0.05, Coarsening::Target(200)).unwrap();
    let direct = mmle_select(&stats, &grid).unwrap();
    for ext in ["bin", "csv"] {
        let file = dir.path().join(format!("stats.{ext}"));
        save_stats(&stats, &file).unwrap();
        let reloaded = mmle_select(&load_stats(&file).unwrap(), &grid).unwrap();
        assert_eq!(reloaded.lambda_hat, direct.lambda_hat);
        assert_eq!(reloaded.table, direct.table);
    }

    let (sel, post) = empirical_posterior(&stats, &grid).unwrap();
    assert_eq!(sel.lambda_hat, direct.lambda_hat);
    // the posterior mean beats the zero function by a clear margin
    let err = l2_distance(&post.mean_function(), &truth);
    assert!(err < 0.6 * truth.l2_norm(), "error {err} vs norm {}", truth.l2_norm());
}

#[test]
fn smoothness_selection_centres_on_truth() {
    let t = 4096.0;
    let truth = make_sobolev_truth(&SmoothnessSpec::deterministic(1.0), 256).unwrap();
    let grid = build_grid(GridCase::SmoothnessOnly { s: 1.0 }, t, 0.05, Coarsening::Target(200)).unwrap();
    let alphas: Vec<f64> = (0..20)
        .map(|r| {
            let path = simulate_path(&truth, &SimConfig::new(t, substream_seed(5, r))).unwrap();
            let stats = sufficient_stats(&path, 64).unwrap();
            mmle_select(&stats, &grid).unwrap().lambda_hat.alpha
        })
        .collect();
    let m = median(alphas);
    assert!((0.6..=1.6).contains(&m), "median alpha_hat {m}");
}

#[test]
fn scale_selection_tracks_optimal_scale() {
    let (t, beta) = (4096.0, 0.5);
    let truth = make_sobolev_truth(&SmoothnessSpec::deterministic(beta), 256).unwrap();
    let grid = build_grid(GridCase::ScaleOnly { alpha: 1.0 }, t, 0.05, Coarsening::Target(200)).unwrap();
    let scales: Vec<f64> = (0..10)
        .map(|r| {
            let path = simulate_path(&truth, &SimConfig::new(t, substream_seed(6, r))).unwrap();
            let stats = sufficient_stats(&path, 64).unwrap();
            mmle_select(&stats, &grid).unwrap().lambda_hat.s
        })
        .collect();
    let predicted = optimal_scale(1.0, beta, t);
    let m = median(scales);
    assert!(m / predicted < 4.0 && predicted / m < 4.0, "median s_hat {m}, predicted {predicted}");
}
