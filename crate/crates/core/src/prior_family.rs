//! The truncated Gaussian series prior `Π_λ = law of s Σ_{k ≤ J} k^{-α-1/2} Z_k φ_k`,
//! its tail bound, and the Monte Carlo small-ball machinery behind `ε_λ`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic_basis::PeriodicFunction;
use crate::rng;

/// Default `δ` of the hyperparameter domain `Λ₁`.
pub const DEFAULT_DELTA: f64 = 0.05;

/// Samples per parallel Monte Carlo chunk; chunk `c` uses sub-stream `c`.
const MC_CHUNK: usize = 8192;

/// Hyperparameter `λ = (α, s)`: smoothness exponent and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub alpha: f64,
    pub s: f64,
}

impl HyperParam {
    /// Requires `α > 0` and `s ≥ 0`; membership in `Λ₁` is checked separately.
    pub fn new(alpha: f64, s: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "s must be nonnegative and finite, got {s}"
            )));
        }
        Ok(Self { alpha, s })
    }

    /// `1/2+δ ≤ α ≤ √(log T)` and `T^{-1/(4+4α)} ≤ s ≤ T^α`.
    pub fn in_lambda1(&self, horizon: f64, delta: f64) -> bool {
        let log_t = horizon.ln();
        let tol = 1e-12;
        let alpha_ok = self.alpha >= 0.5 + delta - tol && self.alpha <= log_t.sqrt() + tol;
        alpha_ok && self.in_scale_range(horizon)
    }

    /// `T^{-1/(4+4α)} ≤ s ≤ T^α` (the scale range for this `α`).
    pub fn in_scale_range(&self, horizon: f64) -> bool {
        let (lo, hi) = scale_range(self.alpha, horizon);
        self.s >= lo * (1.0 - 1e-12) && self.s <= hi * (1.0 + 1e-12)
    }

    /// Log prior variance of coefficient `k`: `2 log s − (2α+1) log k`.
    pub fn log_variance(&self, k: usize) -> f64 {
        2.0 * self.s.ln() - (2.0 * self.alpha + 1.0) * (k as f64).ln()
    }
}

/// `[T^{-1/(4+4α)}, T^α]`.
pub fn scale_range(alpha: f64, horizon: f64) -> (f64, f64) {
    (
        horizon.powf(-1.0 / (4.0 + 4.0 * alpha)),
        horizon.powf(alpha),
    )
}

pub fn prior_sd(lambda: &HyperParam, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroBasisIndex);
    }
    Ok(lambda.s * (k as f64).powf(-lambda.alpha - 0.5))
}

fn prior_sds(lambda: &HyperParam, j: usize) -> Vec<f64> {
    (1..=j)
        .map(|k| lambda.s * (k as f64).powf(-lambda.alpha - 0.5))
        .collect()
}

pub fn sample_prior(lambda: &HyperParam, j: usize, seed: u64) -> Result<PeriodicFunction> {
    if j == 0 {
        return Err(Error::InvalidArgument("J must be >= 1".into()));
    }
    let mut rng = rng::stream(seed);
    Ok(draw_prior(&prior_sds(lambda, j), &mut rng))
}

fn draw_prior<R: Rng>(sds: &[f64], rng: &mut R) -> PeriodicFunction {
    PeriodicFunction::new(
        sds.iter()
            .map(|sd| sd * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Log density of `Π_λ` on the `J`-dimensional coefficient space.
pub fn prior_log_density(lambda: &HyperParam, theta: &PeriodicFunction) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    theta
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let lv = lambda.log_variance(i + 1);
            -0.5 * (ln_2pi + lv + c * c * (-lv).exp())
        })
        .sum()
}

/// Upper bound `exp(−α x²/s²)` on `Π_λ(‖θ‖₂ > x)`, valid for `x/s ≥ 1/√(2α)`.
pub fn tail_bound(lambda: &HyperParam, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Precondition(format!("x must be positive, got {x}")));
    }
    let ratio = x / lambda.s;
    let threshold = 1.0 / (2.0 * lambda.alpha).sqrt();
    if ratio < threshold {
        return Err(Error::Precondition(format!(
            "tail bound needs x/s >= 1/sqrt(2 alpha) = {threshold}, got {ratio}"
        )));
    }
    Ok((-lambda.alpha * ratio * ratio).exp())
}

/// Monte Carlo estimate of `log Π_λ(‖θ − θ₀‖₂ < r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallEstimate {
    /// `log(hits/n)`, or `-∞` when no draw landed in the ball.
    pub log_prob: f64,
    /// One-standard-error halfwidth on the log scale, `√((1−p)/(n p))`.
    pub ci_halfwidth: f64,
    pub hits: usize,
    pub samples: usize,
    /// Set when `hits == 0`; only `log_upper` is informative then.
    pub zero_hits: bool,
    /// Log of the 95% one-sided upper bound `3/n` (rule of three) when zero
    /// hits, else `log_prob + ci_halfwidth`.
    pub log_upper: f64,
}

impl SmallBallEstimate {
    fn from_counts(hits: usize, samples: usize) -> Self {
        let n = samples as f64;
        if hits == 0 {
            return Self {
                log_prob: f64::NEG_INFINITY,
                ci_halfwidth: f64::INFINITY,
                hits,
                samples,
                zero_hits: true,
                log_upper: (3.0 / n).ln(),
            };
        }
        let p = hits as f64 / n;
        let ci = ((1.0 - p) / (n * p)).sqrt();
        Self {
            log_prob: p.ln(),
            ci_halfwidth: ci,
            hits,
            samples,
            zero_hits: false,
            log_upper: p.ln() + ci,
        }
    }
}

/// Sorted squared distances `‖θ − θ₀‖₂²` of `n` prior draws.
///
/// Every radius query reuses the same draws (common random numbers), so the
/// estimated ball probability is exactly monotone in the radius.
#[derive(Debug, Clone)]
pub struct SmallBallSampler {
    sq_dists: Vec<f64>,
}

impl SmallBallSampler {
    pub fn new(
        lambda: &HyperParam,
        theta0: &PeriodicFunction,
        j: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_samples < 1000 {
            return Err(Error::Precondition(format!(
                "small-ball estimates need at least 1000 samples, got {n_samples}"
            )));
        }
        if j == 0 {
            return Err(Error::InvalidArgument("J must be >= 1".into()));
        }
        let sds = prior_sds(lambda, j);
        // θ₀ coefficients beyond J contribute a fixed offset to every distance.
        let center: Vec<f64> = (1..=j).map(|k| theta0.coeff(k)).collect();
        let tail: f64 = theta0.coeffs().iter().skip(j).map(|c| c * c).sum();
        let chunks = n_samples.div_ceil(MC_CHUNK);
        let mut sq_dists: Vec<f64> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let len = MC_CHUNK.min(n_samples - c * MC_CHUNK);
                let mut rng = rng::stream(rng::substream_seed(seed, c as u64));
                let sds = &sds;
                let center = &center;
                (0..len)
                    .map(move |_| {
                        let mut acc = tail;
                        for (sd, c0) in sds.iter().zip(center) {
                            let d = sd * rng.sample::<f64, _>(StandardNormal) - c0;
                            acc += d * d;
                        }
                        acc
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        sq_dists.sort_by(f64::total_cmp);
        Ok(Self { sq_dists })
    }

    pub fn samples(&self) -> usize {
        self.sq_dists.len()
    }

    /// Number of draws strictly inside the ball of radius `r`.
    pub fn hits(&self, radius: f64) -> usize {
        let r2 = radius * radius;
        self.sq_dists.partition_point(|&d| d < r2)
    }

    pub fn estimate(&self, radius: f64) -> SmallBallEstimate {
        SmallBallEstimate::from_counts(self.hits(radius), self.samples())
    }
}

pub fn small_ball_log_prob(
    lambda: &HyperParam,
    theta0: &PeriodicFunction,
    radius: f64,
    j: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SmallBallEstimate> {
    Ok(SmallBallSampler::new(lambda, theta0, j, n_samples, seed)?.estimate(radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSolveReport {
    pub eps_hat: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub mc_samples: usize,
    pub ci_halfwidth: f64,
    /// `log Π̂(‖θ−θ₀‖ < K ε̂) + T ε̂²`.
    pub residual: f64,
    pub hits: usize,
}

/// Root of `g(ε) = log_ball(K ε) + T ε²` for a nondecreasing `log_ball`.
///
/// Returns the smallest bracketing point with `g ≥ 0` once the bracket is
/// below relative width `1e-13`. `log_ball` may return `-∞`.
pub fn solve_eps_with<F>(log_ball: F, horizon: f64, k: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("K must be positive, got {k}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {horizon}")));
    }
    let g = |eps: f64| log_ball(k * eps) + horizon * eps * eps;
    let mut hi = 1.0;
    let mut guard = 0;
    while !(g(hi) >= 0.0) {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::InvalidArgument("no upper bracket for eps".into()));
        }
    }
    let mut lo = hi / 2.0;
    guard = 0;
    while g(lo) >= 0.0 {
        hi = lo;
        lo /= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::InvalidArgument("no lower bracket for eps".into()));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Solve `Π_λ(‖θ − θ₀‖₂ < K ε) = e^{−T ε²}` with a Monte Carlo ball oracle.
#[allow(clippy::too_many_arguments)]
pub fn solve_eps_lambda(
    lambda: &HyperParam,
    theta0: &PeriodicFunction,
    k: f64,
    horizon: f64,
    j: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<EpsSolveReport> {
    let sampler = SmallBallSampler::new(lambda, theta0, j, mc_samples, seed)?;
    let eps = solve_eps_with(|r| sampler.estimate(r).log_prob, horizon, k)?;
    let est = sampler.estimate(k * eps);
    if est.zero_hits {
        return Err(Error::Unresolvable {
            radius: k * eps,
            samples: mc_samples,
        });
    }
    Ok(EpsSolveReport {
        eps_hat: eps,
        k,
        mc_samples,
        ci_halfwidth: est.ci_halfwidth,
        residual: est.log_prob + horizon * eps * eps,
        hits: est.hits,
    })
}
