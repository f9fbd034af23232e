//! Closed-form Gaussian posterior and log evidence for the truncated
//! series prior.
//!
//! With prior covariance `V = diag(v_k)`, `v_k = s² k^{-2α-1}`, the posterior
//! precision is `P = G + V⁻¹` and the mean is `P⁻¹b`. Factorizations are
//! carried out on the whitened matrix `B = I + V^{1/2} G V^{1/2}`, whose
//! spectrum is bounded below by one, so that
//!
//! ```text
//! P = V^{-1/2} B V^{-1/2},   log det P + Σ log v_k = log det B,
//! mean = V^{1/2} B⁻¹ V^{1/2} b.
//! ```
//!
//! The lower Cholesky factor of `P` is `V^{-1/2} L_B`. Coordinates whose
//! prior precision `k^{2α+1}/s²` exceeds `1e300` are pinned: their prior
//! variance is treated as exactly zero, so the posterior coordinate is 0
//! with zero variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_stats::SuffStats;
use crate::periodic_basis::PeriodicFunction;
use crate::prior_family::HyperParam;
use crate::rng;

const PRECISION_CAP_LN: f64 = 690.775_527_898_213_7; // ln(1e300)
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Whitened {
    sqrt_var: DVector<f64>,
    pinned: Vec<bool>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    /// `B⁻¹ V^{1/2} b`
    weights: DVector<f64>,
    /// `V^{1/2} b`
    scaled_b: DVector<f64>,
}

fn whiten(stats: &SuffStats, lambda: &HyperParam) -> Result<Whitened> {
    stats.validate()?;
    if !(lambda.s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "posterior needs s > 0, got {}",
            lambda.s
        )));
    }
    let j = stats.truncation();
    let mut pinned = vec![false; j];
    let sqrt_var = DVector::from_iterator(
        j,
        (1..=j).map(|k| {
            let lv = lambda.log_variance(k);
            if -lv > PRECISION_CAP_LN {
                pinned[k - 1] = true;
                0.0
            } else {
                (0.5 * lv).exp()
            }
        }),
    );
    let mut b_mat = DMatrix::from_fn(j, j, |r, c| sqrt_var[r] * stats.gram[(r, c)] * sqrt_var[c]);
    for i in 0..j {
        b_mat[(i, i)] += 1.0;
    }
    let base = b_mat.trace() / j as f64;
    let mut jitter = 0.0;
    let chol = match Cholesky::new(b_mat.clone()) {
        Some(c) => c,
        None => {
            let mut level = JITTER_START;
            loop {
                jitter = level * base;
                let mut m = b_mat.clone();
                for i in 0..j {
                    m[(i, i)] += jitter;
                }
                if let Some(c) = Cholesky::new(m) {
                    log::warn!("Cholesky needed jitter {jitter:e} at {lambda:?}");
                    break c;
                }
                if level >= JITTER_MAX {
                    return Err(Error::Singular { jitter });
                }
                level *= 10.0;
            }
        }
    };
    let scaled_b = stats.b.component_mul(&sqrt_var);
    let weights = chol.solve(&scaled_b);
    Ok(Whitened {
        sqrt_var,
        pinned,
        chol,
        jitter,
        weights,
        scaled_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceValue {
    pub log_ml: f64,
    pub lambda: HyperParam,
    #[serde(rename = "J")]
    pub j: usize,
    /// Rough `cond(P)` estimate from the extreme diagonal entries of its factor.
    pub conditioning: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    sqrt_var: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    pinned: Vec<bool>,
    pub lambda: HyperParam,
    pub horizon: f64,
    pub jitter: f64,
}

fn conditioning_estimate(w: &Whitened) -> f64 {
    let l = w.chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for i in 0..w.sqrt_var.len() {
        let d = if w.pinned[i] {
            1e150
        } else {
            l[(i, i)] / w.sqrt_var[i]
        };
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi / lo).powi(2)
}

pub fn fit_posterior(stats: &SuffStats, lambda: &HyperParam) -> Result<GaussianPosterior> {
    let w = whiten(stats, lambda)?;
    let mean = w.weights.component_mul(&w.sqrt_var);
    Ok(GaussianPosterior {
        mean,
        sqrt_var: w.sqrt_var,
        chol: w.chol,
        pinned: w.pinned,
        lambda: *lambda,
        horizon: stats.horizon,
        jitter: w.jitter,
    })
}

/// `½ bᵀP⁻¹b − ½(Σ log v_k + log det P)`, the log evidence relative to
/// Wiener measure.
pub fn log_marginal_likelihood(stats: &SuffStats, lambda: &HyperParam) -> Result<EvidenceValue> {
    let w = whiten(stats, lambda)?;
    let quad = w.scaled_b.dot(&w.weights);
    let half_logdet: f64 = w.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let log_ml = 0.5 * quad - half_logdet;
    if !log_ml.is_finite() {
        return Err(Error::Singular { jitter: w.jitter });
    }
    Ok(EvidenceValue {
        log_ml,
        lambda: *lambda,
        j: stats.truncation(),
        conditioning: conditioning_estimate(&w),
    })
}

impl GaussianPosterior {
    pub fn truncation(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_function(&self) -> PeriodicFunction {
        PeriodicFunction::new(self.mean.as_slice().to_vec())
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    /// Lower-triangular `L` with `L Lᵀ = P = G + V⁻¹`.
    pub fn precision_factor(&self) -> DMatrix<f64> {
        let mut l = self.chol.l();
        for r in 0..l.nrows() {
            let scale = if self.pinned[r] {
                1e150
            } else {
                1.0 / self.sqrt_var[r]
            };
            l.row_mut(r).scale_mut(scale);
        }
        l
    }

    /// Posterior covariance `P⁻¹ = V^{1/2} B⁻¹ V^{1/2}`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        DMatrix::from_fn(inv.nrows(), inv.ncols(), |r, c| {
            self.sqrt_var[r] * inv[(r, c)] * self.sqrt_var[c]
        })
    }

    /// Log density of the posterior on the coefficient space.
    pub fn log_density(&self, theta: &PeriodicFunction) -> f64 {
        let j = self.truncation();
        let mut z = DVector::zeros(j);
        let mut log_det_sqrt_var = 0.0;
        for i in 0..j {
            if self.pinned[i] {
                continue;
            }
            z[i] = (theta.coeff(i + 1) - self.mean[i]) / self.sqrt_var[i];
            log_det_sqrt_var += self.sqrt_var[i].ln();
        }
        // (θ−m)ᵀP(θ−m) = ‖L_Bᵀ V^{-1/2}(θ−m)‖²
        let u = self.chol.l().tr_mul(&z);
        let half_logdet_b: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let free = self.pinned.iter().filter(|p| !**p).count() as f64;
        -0.5 * u.norm_squared() + half_logdet_b - log_det_sqrt_var
            - 0.5 * free * (2.0 * std::f64::consts::PI).ln()
    }

    /// `L_B^{-T} ξ` scaled by `V^{1/2}`: a centered posterior draw.
    fn centered_draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let j = self.truncation();
        let xi = DVector::from_fn(j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&xi)
            .expect("Cholesky factor has a positive diagonal");
        u.component_mul(&self.sqrt_var)
    }
}

pub fn posterior_sample(
    post: &GaussianPosterior,
    n: usize,
    seed: u64,
) -> Result<Vec<PeriodicFunction>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let mut rng = rng::stream(seed);
    Ok((0..n)
        .map(|_| {
            let d = post.centered_draw(&mut rng) + &post.mean;
            PeriodicFunction::new(d.as_slice().to_vec())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallProbability {
    pub prob: f64,
    /// 95% normal-approximation halfwidth `1.96·√(p(1−p)/n)`.
    pub ci_halfwidth: f64,
    pub samples: usize,
}

/// Monte Carlo posterior mass of the L² ball `{θ : ‖θ − center‖₂ ≤ radius}`.
pub fn posterior_ball_prob(
    post: &GaussianPosterior,
    center: &PeriodicFunction,
    radius: f64,
    n: usize,
    seed: u64,
) -> Result<BallProbability> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be nonnegative, got {radius}"
        )));
    }
    let j = post.truncation();
    let offset: DVector<f64> = DVector::from_fn(j, |i, _| post.mean[i] - center.coeff(i + 1));
    let tail: f64 = center.coeffs().iter().skip(j).map(|c| c * c).sum();
    let r2 = radius * radius;
    let mut rng = rng::stream(seed);
    let hits = (0..n)
        .filter(|_| {
            let d = post.centered_draw(&mut rng) + &offset;
            d.norm_squared() + tail <= r2 && radius > 0.0
        })
        .count();
    let p = hits as f64 / n as f64;
    Ok(BallProbability {
        prob: p,
        ci_halfwidth: 1.96 * (p * (1.0 - p) / n as f64).sqrt(),
        samples: n,
    })
}

/// Empirical `level`-quantile of `‖θ − mean‖₂` under the posterior.
pub fn credible_radius(post: &GaussianPosterior, level: f64, n: usize, seed: u64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let mut rng = rng::stream(seed);
    let mut norms: Vec<f64> = (0..n).map(|_| post.centered_draw(&mut rng).norm()).collect();
    norms.sort_by(f64::total_cmp);
    let idx = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok(norms[idx])
}
