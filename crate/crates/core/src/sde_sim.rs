//! Euler–Maruyama simulation of `dX_t = θ₀(X_t) dt + dW_t`.
//!
//! The diffusion coefficient is constant, so Euler–Maruyama and Milstein
//! coincide. The path is a quasi-continuous stand-in for the continuous
//! observation; accuracy is controlled through `dt` and checked by
//! refinement tests rather than by theory.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic_basis::{reduce_mod1, PeriodicFunction};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub x0: f64,
}

impl SimConfig {
    /// Config with the default step `min(0.01, T^{-1/2}/10)` and `x0 = 0`.
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            dt: Self::default_dt(horizon),
            seed,
            x0: 0.0,
        }
    }

    pub fn default_dt(horizon: f64) -> f64 {
        (0.01_f64).min(horizon.powf(-0.5) / 10.0)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 1.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon T must be finite and >= 1, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0) || self.dt > self.horizon {
            return Err(Error::InvalidArgument(format!(
                "step dt must lie in (0, T], got {}",
                self.dt
            )));
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// A uniformly discretized realization `X_0, …, X_N` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
    pub drift_id: String,
}

impl SamplePath {
    /// Checked constructor for paths that did not come from [`simulate_path`].
    pub fn from_values(
        values: Vec<f64>,
        dt: f64,
        horizon: f64,
        seed: u64,
        drift_id: impl Into<String>,
    ) -> Result<Self> {
        let path = Self {
            dt,
            values,
            horizon,
            seed,
            drift_id: drift_id.into(),
        };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::InvalidArgument(
                "path needs at least two points".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        let n = self.steps() as f64;
        if (n * self.dt - self.horizon).abs() > self.dt / 2.0 + 1e-9 * self.horizon {
            return Err(Error::InvalidArgument(format!(
                "N·dt = {} inconsistent with T = {}",
                n * self.dt,
                self.horizon
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite path value at index {i}"
            )));
        }
        Ok(())
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }
}

/// Brownian increments `√dt·ξ_i` for `n` steps from the seeded stream.
pub fn brownian_increments(n: usize, dt: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed);
    let sd = dt.sqrt();
    (0..n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Euler–Maruyama driven by caller-supplied Brownian increments.
pub fn simulate_with_increments(
    theta0: &PeriodicFunction,
    x0: f64,
    dt: f64,
    increments: &[f64],
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut x = x0;
    values.push(x);
    for (step, dw) in increments.iter().enumerate() {
        let drift = theta0.eval(x);
        if !drift.is_finite() {
            return Err(Error::NonFiniteDrift { step, x });
        }
        x += drift * dt + dw;
        values.push(x);
    }
    Ok(values)
}

pub fn simulate_path(theta0: &PeriodicFunction, cfg: &SimConfig) -> Result<SamplePath> {
    cfg.validate()?;
    let n = cfg.steps().max(1);
    let increments = brownian_increments(n, cfg.dt, cfg.seed);
    let values = simulate_with_increments(theta0, cfg.x0, cfg.dt, &increments)?;
    Ok(SamplePath {
        dt: cfg.dt,
        values,
        horizon: cfg.horizon,
        seed: cfg.seed,
        drift_id: theta0.descriptor(),
    })
}

pub fn wrap_to_circle(path: &SamplePath) -> Vec<f64> {
    path.values.iter().map(|&x| reduce_mod1(x)).collect()
}

/// Normalized occupation histogram of `X mod 1` over `bins` equal cells.
pub fn occupation_histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &x in values {
        let cell = ((reduce_mod1(x) * bins as f64) as usize).min(bins - 1);
        counts[cell] += 1;
    }
    let scale = bins as f64 / values.len() as f64;
    counts.into_iter().map(|c| c as f64 * scale).collect()
}
