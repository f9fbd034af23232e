//! Discrete hyperparameter grids and marginal-maximum-likelihood selection.
//!
//! Three grid families are supported:
//!
//! - scale only, `α` fixed: `s = l·T^{-1/(4+4α)}`, `1 ≤ l ≤ T^{α+1/(4+4α)}`;
//! - smoothness only, `s` fixed: `α = k/log T`, `(1/2+δ) log T ≤ k ≤ (log T)^{3/2}`;
//! - joint: the product of the two, with the scale range depending on `α`.
//!
//! The scale axis can be subsampled ([`Coarsening`]); endpoints are always
//! kept and the resulting grid records that it was coarsened.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate_posterior::{fit_posterior, log_marginal_likelihood, GaussianPosterior};
use crate::error::{Error, Result};
use crate::path_stats::SuffStats;
use crate::prior_family::{scale_range, HyperParam};

/// Relative slack used when rounding grid bounds to integers.
const INT_TOL: f64 = 1e-9;

fn floor_tol(x: f64) -> f64 {
    (x + INT_TOL * x.abs().max(1.0)).floor()
}

fn ceil_tol(x: f64) -> f64 {
    (x - INT_TOL * x.abs().max(1.0)).ceil()
}

fn near_integer(x: f64) -> Option<u64> {
    let r = x.round();
    ((x - r).abs() <= 1e-7 * x.abs().max(1.0) && r >= 0.0).then_some(r as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "case")]
pub enum GridCase {
    /// Fixed `α`, grid over `s`.
    ScaleOnly { alpha: f64 },
    /// Fixed `s`, grid over `α`.
    SmoothnessOnly { s: f64 },
    /// Grid over both.
    Joint,
}

impl GridCase {
    pub fn label(&self) -> &'static str {
        match self {
            GridCase::ScaleOnly { .. } => "1prime",
            GridCase::SmoothnessOnly { .. } => "2prime",
            GridCase::Joint => "3prime",
        }
    }
}

/// Subsampling policy for the scale index `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coarsening {
    Full,
    /// Every `m`-th `l` starting at 1, plus the last.
    Stride(u64),
    /// At most `n` geometrically spaced `l` values.
    Target(usize),
}

impl Default for Coarsening {
    fn default() -> Self {
        Coarsening::Target(200)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: HyperParam,
    /// `k` with `α = k / log T` (smoothness and joint grids).
    pub k: Option<u64>,
    /// `l` with `s = l·T^{-1/(4+4α)}` (scale and joint grids).
    pub l: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub case: GridCase,
    pub horizon: f64,
    pub delta: f64,
    pub coarsen_s: Coarsening,
    /// True when some admissible `l` were dropped by coarsening.
    pub coarsened: bool,
    pub points: Vec<GridPoint>,
}

fn scale_unit(alpha: f64, horizon: f64) -> f64 {
    scale_range(alpha, horizon).0
}

fn l_max(alpha: f64, horizon: f64) -> u64 {
    floor_tol(horizon.powf(alpha + 1.0 / (4.0 + 4.0 * alpha))).max(0.0) as u64
}

fn k_range(horizon: f64, delta: f64) -> (u64, u64) {
    let log_t = horizon.ln();
    let lo = ceil_tol((0.5 + delta) * log_t).max(1.0) as u64;
    let hi = floor_tol(log_t.powf(1.5)).max(0.0) as u64;
    (lo, hi)
}

fn l_indices(l_max: u64, coarsen: Coarsening) -> Vec<u64> {
    if l_max == 0 {
        return Vec::new();
    }
    let mut ls: Vec<u64> = match coarsen {
        Coarsening::Full => (1..=l_max).collect(),
        Coarsening::Stride(m) => {
            let m = m.max(1);
            (1..=l_max).step_by(m as usize).chain([l_max]).collect()
        }
        Coarsening::Target(n) => {
            let n = n.max(2);
            if (l_max as usize) <= n {
                (1..=l_max).collect()
            } else {
                let top = (l_max as f64).ln();
                (0..n)
                    .map(|i| {
                        let v = (top * i as f64 / (n - 1) as f64).exp().round() as u64;
                        v.clamp(1, l_max)
                    })
                    .chain([1, l_max])
                    .collect()
            }
        }
    };
    ls.sort_unstable();
    ls.dedup();
    ls
}

pub fn build_grid(case: GridCase, horizon: f64, delta: f64, coarsen_s: Coarsening) -> Result<GridSpec> {
    if !(horizon >= std::f64::consts::E) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grid needs T >= e so that log T >= 1, got {horizon}"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let log_t = horizon.ln();
    let mut points = Vec::new();
    let mut coarsened = false;
    let mut push_scale_axis = |alpha: f64, k: Option<u64>, points: &mut Vec<GridPoint>| {
        let lmax = l_max(alpha, horizon);
        let ls = l_indices(lmax, coarsen_s);
        coarsened |= (ls.len() as u64) < lmax;
        let unit = scale_unit(alpha, horizon);
        for l in ls {
            points.push(GridPoint {
                lambda: HyperParam { alpha, s: l as f64 * unit },
                k,
                l: Some(l),
            });
        }
    };
    match case {
        GridCase::ScaleOnly { alpha } => {
            if !(alpha > 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "fixed alpha must exceed 1/2, got {alpha}"
                )));
            }
            push_scale_axis(alpha, None, &mut points);
        }
        GridCase::SmoothnessOnly { s } => {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument(format!("fixed s must be positive, got {s}")));
            }
            let (lo, hi) = k_range(horizon, delta);
            for k in lo..=hi {
                points.push(GridPoint {
                    lambda: HyperParam { alpha: k as f64 / log_t, s },
                    k: Some(k),
                    l: None,
                });
            }
        }
        GridCase::Joint => {
            let (lo, hi) = k_range(horizon, delta);
            for k in lo..=hi {
                push_scale_axis(k as f64 / log_t, Some(k), &mut points);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "case {} at T = {horizon}, delta = {delta} has no admissible points",
            case.label()
        )));
    }
    points.sort_by(|a, b| {
        a.lambda
            .alpha
            .total_cmp(&b.lambda.alpha)
            .then(a.lambda.s.total_cmp(&b.lambda.s))
    });
    points.dedup_by(|a, b| a.lambda == b.lambda);
    Ok(GridSpec {
        case,
        horizon,
        delta,
        coarsen_s,
        coarsened,
        points,
    })
}

impl GridSpec {
    pub fn lambdas(&self) -> Vec<HyperParam> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    /// Whether `λ` belongs to the (uncoarsened) discrete set of this case.
    pub fn is_member(&self, lambda: &HyperParam) -> bool {
        is_grid_member(self.case, self.horizon, self.delta, lambda)
    }
}

/// Membership in the discrete hyperparameter set, with `k` and `l`
/// recovered as integers.
pub fn is_grid_member(case: GridCase, horizon: f64, delta: f64, lambda: &HyperParam) -> bool {
    let log_t = horizon.ln();
    let k_ok = |alpha: f64| -> bool {
        let (lo, hi) = k_range(horizon, delta);
        near_integer(alpha * log_t).is_some_and(|k| k >= lo && k <= hi)
    };
    let l_ok = |alpha: f64, s: f64| -> bool {
        near_integer(s / scale_unit(alpha, horizon)).is_some_and(|l| l >= 1 && l <= l_max(alpha, horizon))
    };
    match case {
        GridCase::ScaleOnly { alpha } => lambda.alpha == alpha && l_ok(alpha, lambda.s),
        GridCase::SmoothnessOnly { s } => lambda.s == s && k_ok(lambda.alpha),
        GridCase::Joint => k_ok(lambda.alpha) && l_ok(lambda.alpha, lambda.s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub lambda_hat: HyperParam,
    pub best_index: usize,
    /// `(λ, log evidence)` in grid order; failed points are absent.
    pub table: Vec<(HyperParam, f64)>,
    /// Indices into `table` with `log_ml ≥ max − log 2`.
    pub half_max_set: Vec<usize>,
    /// More than one point attained the maximum exactly.
    pub tie_break_applied: bool,
    /// Grid points whose evidence could not be evaluated, with the reason.
    pub excluded: Vec<(HyperParam, String)>,
}

/// Argmax of a `(λ, log evidence)` table.
///
/// Ties go to the lexicographically smallest `(α, s)`; the half-max set is
/// every entry within `log 2` of the maximum.
pub fn select_from_table(table: Vec<(HyperParam, f64)>) -> Result<SelectionResult> {
    if table.is_empty() {
        return Err(Error::NoSurvivingPoints);
    }
    let max = table
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let lex = |a: &HyperParam, b: &HyperParam| a.alpha.total_cmp(&b.alpha).then(a.s.total_cmp(&b.s));
    let maximizers: Vec<usize> = (0..table.len()).filter(|&i| table[i].1 == max).collect();
    let best_index = *maximizers
        .iter()
        .min_by(|&&a, &&b| lex(&table[a].0, &table[b].0))
        .expect("nonempty table has a maximizer");
    let threshold = max - std::f64::consts::LN_2;
    let half_max_set = (0..table.len()).filter(|&i| table[i].1 >= threshold).collect();
    Ok(SelectionResult {
        lambda_hat: table[best_index].0,
        best_index,
        tie_break_applied: maximizers.len() > 1,
        half_max_set,
        table,
        excluded: Vec::new(),
    })
}

pub fn mmle_select(stats: &SuffStats, grid: &GridSpec) -> Result<SelectionResult> {
    if grid.points.is_empty() {
        return Err(Error::EmptyGrid("grid has no points".into()));
    }
    let evaluated: Vec<(HyperParam, Result<f64>)> = grid
        .points
        .par_iter()
        .map(|p| (p.lambda, log_marginal_likelihood(stats, &p.lambda).map(|e| e.log_ml)))
        .collect();
    let mut table = Vec::with_capacity(evaluated.len());
    let mut excluded = Vec::new();
    for (lambda, res) in evaluated {
        match res {
            Ok(v) => table.push((lambda, v)),
            Err(e) => {
                log::warn!("evidence failed at {lambda:?}: {e}");
                excluded.push((lambda, e.to_string()));
            }
        }
    }
    let mut result = select_from_table(table)?;
    result.excluded = excluded;
    Ok(result)
}

pub fn empirical_posterior(
    stats: &SuffStats,
    grid: &GridSpec,
) -> Result<(SelectionResult, GaussianPosterior)> {
    let selection = mmle_select(stats, grid)?;
    let post = fit_posterior(stats, &selection.lambda_hat)?;
    Ok((selection, post))
}

/// Write the selection table as CSV `alpha,s,log_ml,in_half_max_set`.
pub fn write_selection_csv<W: Write>(result: &SelectionResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "alpha,s,log_ml,in_half_max_set")?;
    let mut in_set = vec![false; result.table.len()];
    for &i in &result.half_max_set {
        in_set[i] = true;
    }
    for ((lambda, v), flag) in result.table.iter().zip(in_set) {
        writeln!(
            out,
            "{},{},{},{}",
            crate::io::fmt_f64(lambda.alpha),
            crate::io::fmt_f64(lambda.s),
            crate::io::fmt_f64(*v),
            flag
        )?;
    }
    Ok(())
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximization of a unimodal `f` on `[a, b]`.
fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Continuous refinement of a grid selection.
///
/// Starting from `selection.lambda_hat`, golden-section search in `log s`
/// (scale and joint cases) and in `α` (smoothness and joint cases) between
/// the neighbouring values of the bracketing grid, clamped to the continuous
/// domain. The result is kept only if it improves the evidence and lies in
/// the continuous domain of the case.
pub fn refine_continuous(
    stats: &SuffStats,
    grid: &GridSpec,
    selection: &SelectionResult,
) -> Result<(HyperParam, f64)> {
    let horizon = grid.horizon;
    let log_t = horizon.ln();
    let best = selection.lambda_hat;
    let best_val = selection.table[selection.best_index].1;
    let eval = |l: HyperParam| {
        log_marginal_likelihood(stats, &l)
            .map(|e| e.log_ml)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let step_alpha = 1.0 / log_t;
    let alpha_bounds = (0.5 + grid.delta, log_t.sqrt());
    let mut current = best;

    let refine_s = |alpha: f64, s: f64| -> (f64, f64) {
        let (lo, hi) = scale_range(alpha, horizon);
        let unit = scale_unit(alpha, horizon);
        let a = (s - unit).max(lo).ln();
        let b = (s + unit).max(s * 1.5).min(hi).ln();
        if b <= a {
            return (s, eval(HyperParam { alpha, s }));
        }
        let (x, v) = golden_max(|ls| eval(HyperParam { alpha, s: ls.exp() }), a, b, 60);
        (x.exp(), v)
    };
    let refine_alpha = |alpha: f64, s: f64| -> (f64, f64) {
        let a = (alpha - step_alpha).max(alpha_bounds.0);
        let b = (alpha + step_alpha).min(alpha_bounds.1);
        if b <= a {
            return (alpha, eval(HyperParam { alpha, s }));
        }
        let (x, v) = golden_max(|al| eval(HyperParam { alpha: al, s }), a, b, 60);
        (x, v)
    };

    let mut value = best_val;
    match grid.case {
        GridCase::ScaleOnly { .. } => {
            let (s, v) = refine_s(current.alpha, current.s);
            if v > value {
                current.s = s;
                value = v;
            }
        }
        GridCase::SmoothnessOnly { .. } => {
            let (al, v) = refine_alpha(current.alpha, current.s);
            if v > value {
                current.alpha = al;
                value = v;
            }
        }
        GridCase::Joint => {
            for _ in 0..3 {
                let (al, v) = refine_alpha(current.alpha, current.s);
                let cand = HyperParam { alpha: al, s: current.s };
                if v > value && cand.in_scale_range(horizon) {
                    current = cand;
                    value = v;
                }
                let (s, v) = refine_s(current.alpha, current.s);
                if v > value {
                    current.s = s;
                    value = v;
                }
            }
        }
    }
    let valid = match grid.case {
        GridCase::ScaleOnly { .. } => current.in_scale_range(horizon),
        GridCase::SmoothnessOnly { .. } => {
            current.alpha >= alpha_bounds.0 - 1e-12 && current.alpha <= alpha_bounds.1 + 1e-12
        }
        GridCase::Joint => current.in_lambda1(horizon, grid.delta),
    };
    if valid {
        Ok((current, value))
    } else {
        Ok((best, best_val))
    }
}
