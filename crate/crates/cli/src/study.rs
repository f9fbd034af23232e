//! Rate and selection studies: simulate → statistics → MMLE → empirical
//! posterior, over a list of horizons and seeded replicates.

use std::io::Write;
use std::time::Instant;

use ebdrift::conjugate_posterior::{credible_radius, fit_posterior, posterior_ball_prob};
use ebdrift::diagnostics::{optimal_scale, theoretical_rate};
use ebdrift::io::fmt_f64;
use ebdrift::mmle::{build_grid, empirical_posterior, refine_continuous, GridSpec};
use ebdrift::prior_family::HyperParam;
use ebdrift::rng::substream_seed;
use ebdrift::{l2_distance, simulate_path, sufficient_stats, PeriodicFunction};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Fraction of failed replicates above which a study is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Seed of replicate `r` at horizon `T`: `seed_base` passed through two
/// SplitMix64 rounds keyed by the bit pattern of `T` and by `r`. Adding
/// horizons or replicates never changes the seeds of existing ones.
pub fn replicate_seed(seed_base: u64, horizon: f64, replicate: usize) -> u64 {
    substream_seed(substream_seed(seed_base, horizon.to_bits()), replicate as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudyRow {
    pub horizon: f64,
    pub replicate: usize,
    pub seed: u64,
    pub j: usize,
    pub lambda_hat: HyperParam,
    pub l2_error: f64,
    pub credible_radius_95: f64,
    pub ball_prob: f64,
    pub log_ml_max: f64,
    pub half_max_size: usize,
    /// `(λ, L² error)` for each configured comparator.
    pub comparators: Vec<(HyperParam, f64)>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub horizon: f64,
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonSummary {
    pub horizon: f64,
    pub j: usize,
    pub grid_points: usize,
    pub grid_coarsened: bool,
    pub completed: usize,
    pub mean_l2_error: f64,
    pub sd_l2_error: f64,
    pub median_alpha_hat: f64,
    pub median_s_hat: f64,
    pub mean_ball_prob: f64,
    pub mean_credible_radius: f64,
    pub theoretical_rate: f64,
    pub comparator_mean_l2_error: Vec<(HyperParam, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub beta: f64,
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub target_slope: f64,
    pub horizons: Vec<HorizonSummary>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct RateStudy {
    pub rows: Vec<RateStudyRow>,
    pub summary: RateSummary,
}

struct Prepared {
    truth: PeriodicFunction,
    grids: Vec<GridSpec>,
    jobs: Vec<(usize, usize)>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let grids = cfg
        .t_list
        .iter()
        .map(|&t| build_grid(cfg.grid.grid_case(), t, cfg.grid.delta, cfg.grid.coarsen_s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(crate::config::validation)?;
    let jobs = (0..cfg.t_list.len())
        .flat_map(|ti| (0..cfg.replicates).map(move |r| (ti, r)))
        .collect();
    Ok(Prepared {
        truth: cfg.truth(),
        grids,
        jobs,
    })
}

fn run_replicate(
    cfg: &ExperimentConfig,
    truth: &PeriodicFunction,
    grid: &GridSpec,
    replicate: usize,
) -> ebdrift::Result<RateStudyRow> {
    let started = Instant::now();
    let horizon = grid.horizon;
    let seed = replicate_seed(cfg.seed_base, horizon, replicate);
    let path = simulate_path(truth, &cfg.sim_config(horizon, seed))?;
    let j = cfg.j_policy.resolve(horizon);
    let stats = sufficient_stats(&path, j)?;
    let (selection, mut post) = empirical_posterior(&stats, grid)?;
    let mut lambda_hat = selection.lambda_hat;
    let mut log_ml_max = selection.table[selection.best_index].1;
    if cfg.grid.refine {
        let (refined, value) = refine_continuous(&stats, grid, &selection)?;
        if refined != lambda_hat {
            post = fit_posterior(&stats, &refined)?;
            lambda_hat = refined;
            log_ml_max = value;
        }
    }
    let l2_error = l2_distance(&post.mean_function(), truth);
    let n = cfg.posterior_samples;
    let credible_radius_95 = credible_radius(&post, 0.95, n, substream_seed(seed, 1))?;
    let radius = 2.0 * theoretical_rate(cfg.truth.beta, horizon);
    let ball = posterior_ball_prob(&post, truth, radius, n, substream_seed(seed, 2))?;
    let comparators = cfg
        .comparators
        .iter()
        .map(|lambda| {
            let p = fit_posterior(&stats, lambda)?;
            Ok((*lambda, l2_distance(&p.mean_function(), truth)))
        })
        .collect::<ebdrift::Result<Vec<_>>>()?;
    Ok(RateStudyRow {
        horizon,
        replicate,
        seed,
        j,
        lambda_hat,
        l2_error,
        credible_radius_95,
        ball_prob: ball.prob,
        log_ml_max,
        half_max_size: selection.half_max_set.len(),
        comparators,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Run all `(T, replicate)` jobs concurrently; rows come back in
/// `(T, replicate)` order regardless of scheduling.
fn run_jobs(
    cfg: &ExperimentConfig,
    prep: &Prepared,
) -> Result<(Vec<RateStudyRow>, Vec<Failure>), CliError> {
    let outcomes: Vec<_> = prep
        .jobs
        .par_iter()
        .map(|&(ti, r)| run_replicate(cfg, &prep.truth, &prep.grids[ti], r))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(ti, r), outcome) in prep.jobs.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                let horizon = cfg.t_list[ti];
                log::warn!("replicate {r} at T = {horizon} failed: {e}");
                failures.push(Failure {
                    horizon,
                    replicate: r,
                    seed: replicate_seed(cfg.seed_base, horizon, r),
                    error: e.to_string(),
                });
            }
        }
    }
    let total = prep.jobs.len();
    if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(CliError::Runtime(format!(
            "{} of {total} replicates failed (first: {})",
            failures.len(),
            failures[0].error
        )));
    }
    Ok((rows, failures))
}

pub fn run_rate_study(cfg: &ExperimentConfig) -> Result<RateStudy, CliError> {
    let prep = prepare(cfg)?;
    let (rows, failures) = run_jobs(cfg, &prep)?;
    let horizons: Vec<HorizonSummary> = cfg
        .t_list
        .iter()
        .zip(&prep.grids)
        .map(|(&t, grid)| summarize_horizon(cfg, t, grid, &rows))
        .collect();
    let usable: Vec<&HorizonSummary> = horizons.iter().filter(|h| h.completed > 0).collect();
    let xs: Vec<f64> = usable.iter().map(|h| h.horizon.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|h| h.mean_l2_error.ln()).collect();
    let (fitted_slope, fitted_intercept) = least_squares(&xs, &ys);
    let summary = RateSummary {
        beta: cfg.truth.beta,
        fitted_slope,
        fitted_intercept,
        // log T^{-β/(1+2β)} at T = e is the exponent itself
        target_slope: theoretical_rate(cfg.truth.beta, std::f64::consts::E).ln(),
        horizons,
        failures,
    };
    Ok(RateStudy { rows, summary })
}

fn summarize_horizon(
    cfg: &ExperimentConfig,
    horizon: f64,
    grid: &GridSpec,
    rows: &[RateStudyRow],
) -> HorizonSummary {
    let mine: Vec<&RateStudyRow> = rows.iter().filter(|r| r.horizon == horizon).collect();
    let errs: Vec<f64> = mine.iter().map(|r| r.l2_error).collect();
    let (mean, sd) = mean_sd(&errs);
    let comparator_mean_l2_error = cfg
        .comparators
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let v: Vec<f64> = mine.iter().map(|r| r.comparators[i].1).collect();
            (*l, mean_sd(&v).0)
        })
        .collect();
    HorizonSummary {
        horizon,
        j: cfg.j_policy.resolve(horizon),
        grid_points: grid.points.len(),
        grid_coarsened: grid.coarsened,
        completed: mine.len(),
        mean_l2_error: mean,
        sd_l2_error: sd,
        median_alpha_hat: median(mine.iter().map(|r| r.lambda_hat.alpha).collect()),
        median_s_hat: median(mine.iter().map(|r| r.lambda_hat.s).collect()),
        mean_ball_prob: mean_sd(&mine.iter().map(|r| r.ball_prob).collect::<Vec<_>>()).0,
        mean_credible_radius: mean_sd(
            &mine.iter().map(|r| r.credible_radius_95).collect::<Vec<_>>(),
        )
        .0,
        theoretical_rate: theoretical_rate(cfg.truth.beta, horizon),
        comparator_mean_l2_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub horizon: f64,
    pub replicate: usize,
    pub seed: u64,
    pub lambda_hat: HyperParam,
    /// `T^{(α̂−β)/(1+2β)}`.
    pub predicted_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionHorizon {
    pub horizon: f64,
    pub median_alpha_hat: f64,
    pub median_s_hat: f64,
    pub median_predicted_s: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionStudy {
    pub rows: Vec<SelectionRow>,
    pub horizons: Vec<SelectionHorizon>,
    pub failures: Vec<Failure>,
    pub timings: Vec<(f64, usize, f64)>,
}

/// Track `λ̂` against the scale predicted by the optimal-scaling analysis.
pub fn run_selection_study(cfg: &ExperimentConfig) -> Result<SelectionStudy, CliError> {
    let prep = prepare(cfg)?;
    let (rate_rows, failures) = run_jobs(cfg, &prep)?;
    let beta = cfg.truth.beta;
    let rows: Vec<SelectionRow> = rate_rows
        .iter()
        .map(|r| SelectionRow {
            horizon: r.horizon,
            replicate: r.replicate,
            seed: r.seed,
            lambda_hat: r.lambda_hat,
            predicted_s: optimal_scale(r.lambda_hat.alpha, beta, r.horizon),
        })
        .collect();
    let horizons = cfg
        .t_list
        .iter()
        .map(|&t| {
            let mine: Vec<&SelectionRow> = rows.iter().filter(|r| r.horizon == t).collect();
            SelectionHorizon {
                horizon: t,
                median_alpha_hat: median(mine.iter().map(|r| r.lambda_hat.alpha).collect()),
                median_s_hat: median(mine.iter().map(|r| r.lambda_hat.s).collect()),
                median_predicted_s: median(mine.iter().map(|r| r.predicted_s).collect()),
            }
        })
        .collect();
    let timings = rate_rows
        .iter()
        .map(|r| (r.horizon, r.replicate, r.wall_time))
        .collect();
    Ok(SelectionStudy {
        rows,
        horizons,
        failures,
        timings,
    })
}

pub fn write_rate_rows<W: Write>(rows: &[RateStudyRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "T,replicate,seed,J,alpha_hat,s_hat,l2_error,credible_radius_95,ball_prob_2rate,log_ml_max,half_max_size"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.horizon),
            r.replicate,
            r.seed,
            r.j,
            fmt_f64(r.lambda_hat.alpha),
            fmt_f64(r.lambda_hat.s),
            fmt_f64(r.l2_error),
            fmt_f64(r.credible_radius_95),
            fmt_f64(r.ball_prob),
            fmt_f64(r.log_ml_max),
            r.half_max_size
        )?;
    }
    w.flush()
}

pub fn write_comparator_rows<W: Write>(rows: &[RateStudyRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "T,replicate,alpha,s,l2_error")?;
    for r in rows {
        for (l, e) in &r.comparators {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(r.horizon),
                r.replicate,
                fmt_f64(l.alpha),
                fmt_f64(l.s),
                fmt_f64(*e)
            )?;
        }
    }
    w.flush()
}

pub fn write_selection_rows<W: Write>(rows: &[SelectionRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "T,replicate,seed,alpha_hat,s_hat,predicted_s")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(r.horizon),
            r.replicate,
            r.seed,
            fmt_f64(r.lambda_hat.alpha),
            fmt_f64(r.lambda_hat.s),
            fmt_f64(r.predicted_s)
        )?;
    }
    w.flush()
}

/// Wall-clock times live apart from the result tables so that those stay
/// byte-identical across reruns.
pub fn write_timings<W: Write>(timings: &[(f64, usize, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "T,replicate,wall_time_s")?;
    for (t, r, secs) in timings {
        writeln!(w, "{},{r},{secs:.6}", fmt_f64(*t))?;
    }
    w.flush()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least-squares `(slope, intercept)`; NaN for fewer than two points.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
