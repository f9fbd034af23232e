//! Invariant density, Hellinger/L² equivalence checks, and rate utilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_stats::{sufficient_stats, SuffStats};
use crate::periodic_basis::{frequency, reduce_mod1, PeriodicFunction};
use crate::prior_family::{sample_prior, HyperParam};
use crate::rng;
use crate::sde_sim::SamplePath;

/// Multiplicative slack placed around `√min ρ` and `√max ρ`.
const RHO_SLACK: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub c_rho: f64,
    #[serde(rename = "C_rho")]
    pub big_c_rho: f64,
}

impl DensityProfile {
    pub fn min_rho(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rho(&self) -> f64 {
        self.rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trapezoid integral of `ρ` over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.rho.windows(2))
            .map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1]))
            .sum()
    }
}

/// `2∫₀ˣ θ₀(y) dy`, termwise from the Fourier series.
pub fn drift_potential(theta0: &PeriodicFunction, x: f64) -> f64 {
    let x = reduce_mod1(x);
    let sqrt2 = std::f64::consts::SQRT_2;
    theta0
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (m, is_sin) = frequency(i + 1);
            let w = std::f64::consts::TAU * m as f64;
            let integral = if is_sin {
                (1.0 - (w * x).cos()) / w
            } else {
                (w * x).sin() / w
            };
            2.0 * c * sqrt2 * integral
        })
        .sum()
}

/// `ρ(x) = exp(2∫₀ˣθ₀) / ∫₀¹ exp(2∫₀ʸθ₀) dy` on `n_grid + 1` equispaced nodes of `[0, 1]`.
pub fn invariant_density(theta0: &PeriodicFunction, n_grid: usize) -> Result<DensityProfile> {
    if n_grid < 64 {
        return Err(Error::InvalidArgument(format!(
            "n_grid must be at least 64, got {n_grid}"
        )));
    }
    let grid: Vec<f64> = (0..=n_grid).map(|i| i as f64 / n_grid as f64).collect();
    let unnorm: Vec<f64> = grid.iter().map(|&x| drift_potential(theta0, x).exp()).collect();
    let h = 1.0 / n_grid as f64;
    let z = h * (unnorm.iter().sum::<f64>() - 0.5 * (unnorm[0] + unnorm[n_grid]));
    let rho: Vec<f64> = unnorm.iter().map(|v| v / z).collect();
    let mut profile = DensityProfile {
        grid,
        rho,
        c_rho: 0.0,
        big_c_rho: 0.0,
    };
    profile.c_rho = (1.0 - RHO_SLACK) * profile.min_rho().sqrt();
    profile.big_c_rho = (1.0 + RHO_SLACK) * profile.max_rho().sqrt();
    Ok(profile)
}

#[derive(Debug, Clone)]
pub enum PairSource {
    /// Independent draws `θ, θ′ ~ Π_λ` truncated at `J`.
    Prior { lambda: HyperParam, j: usize },
    Explicit(Vec<(PeriodicFunction, PeriodicFunction)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub ratios: Vec<f64>,
    pub skipped: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub fraction_in_band: f64,
    pub c_rho: f64,
    #[serde(rename = "C_rho")]
    pub big_c_rho: f64,
    pub horizon: f64,
}

/// `h(θ,θ′)/(√T ‖θ−θ′‖₂)` through the exact identity `h² = ΔᵀGΔ`; `None`
/// when `θ = θ′`.
pub fn equivalence_ratio(stats: &SuffStats, delta: &PeriodicFunction) -> Option<f64> {
    let norm_sq = delta.l2_norm().powi(2);
    if norm_sq == 0.0 {
        return None;
    }
    Some((stats.gram_form(delta.coeffs()) / (stats.horizon * norm_sq)).max(0.0).sqrt())
}

/// Compare the random Hellinger metric with `√T·L²` over pairs of drifts.
///
/// The path statistics are computed once at the largest truncation among the
/// pairs; each ratio is then a Rayleigh quotient of `G/T`.
pub fn check_event_e(
    path: &SamplePath,
    profile: &DensityProfile,
    pair_source: &PairSource,
    n_pairs: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let pairs: Vec<(PeriodicFunction, PeriodicFunction)> = match pair_source {
        PairSource::Prior { lambda, j } => {
            let mut rng = rng::stream(seed);
            (0..n_pairs)
                .map(|_| {
                    let a = sample_prior(lambda, *j, rng.random())?;
                    let b = sample_prior(lambda, *j, rng.random())?;
                    Ok((a, b))
                })
                .collect::<Result<_>>()?
        }
        PairSource::Explicit(pairs) => pairs.clone(),
    };
    let j = pairs
        .iter()
        .map(|(a, b)| a.truncation().max(b.truncation()))
        .max()
        .unwrap_or(1)
        .max(1);
    let stats = sufficient_stats(path, j)?;
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for (a, b) in &pairs {
        match equivalence_ratio(&stats, &a.sub(b)) {
            Some(r) => ratios.push(r),
            None => skipped += 1,
        }
    }
    let in_band = ratios
        .iter()
        .filter(|r| **r >= profile.c_rho && **r <= profile.big_c_rho)
        .count();
    Ok(EquivalenceReport {
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        fraction_in_band: if ratios.is_empty() {
            0.0
        } else {
            in_band as f64 / ratios.len() as f64
        },
        ratios,
        skipped,
        c_rho: profile.c_rho,
        big_c_rho: profile.big_c_rho,
        horizon: path.horizon,
    })
}

/// `T^{-β/(1+2β)}`.
pub fn theoretical_rate(beta: f64, horizon: f64) -> f64 {
    horizon.powf(-beta / (1.0 + 2.0 * beta))
}

/// Scale `T^{(α−β)/(1+2β)}` that balances the small-ball and bias terms
/// for a fixed `α`.
pub fn optimal_scale(alpha: f64, beta: f64, horizon: f64) -> f64 {
    horizon.powf((alpha - beta) / (1.0 + 2.0 * beta))
}
