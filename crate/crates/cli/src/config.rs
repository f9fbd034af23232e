//! Experiment configuration: JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use ebdrift::mmle::{Coarsening, GridCase};
use ebdrift::prior_family::{HyperParam, DEFAULT_DELTA};
use ebdrift::sde_sim::SimConfig;
use ebdrift::{PeriodicFunction, SmoothnessSpec, TruthMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which of the Theorem-1 grid families to search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseKind {
    #[serde(rename = "1prime")]
    ScaleOnly,
    #[serde(rename = "2prime")]
    SmoothnessOnly,
    #[serde(rename = "3prime")]
    Joint,
}

impl std::str::FromStr for CaseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1prime" | "1'" | "scale" => Ok(CaseKind::ScaleOnly),
            "2prime" | "2'" | "smoothness" => Ok(CaseKind::SmoothnessOnly),
            "3prime" | "3'" | "joint" => Ok(CaseKind::Joint),
            _ => Err(format!("unknown grid case {s:?} (expected 1prime, 2prime or 3prime)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub case: CaseKind,
    /// Fixed `α` for case 1′.
    #[serde(default = "one")]
    pub alpha_fixed: f64,
    /// Fixed `s` for case 2′.
    #[serde(default = "one")]
    pub s_fixed: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub coarsen_s: Coarsening,
    /// Golden-section refinement of the best grid point.
    #[serde(default)]
    pub refine: bool,
}

fn one() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl GridConfig {
    pub fn grid_case(&self) -> GridCase {
        match self.case {
            CaseKind::ScaleOnly => GridCase::ScaleOnly {
                alpha: self.alpha_fixed,
            },
            CaseKind::SmoothnessOnly => GridCase::SmoothnessOnly { s: self.s_fixed },
            CaseKind::Joint => GridCase::Joint,
        }
    }
}

/// Truncation level of the working basis for horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JPolicy {
    /// `J = ⌊T⌋`.
    FloorT,
    /// `J = min(⌊T⌋, cap)`.
    FloorTCapped(usize),
    Fixed(usize),
}

impl JPolicy {
    pub fn resolve(&self, horizon: f64) -> usize {
        let floor_t = (horizon.floor() as usize).max(1);
        match *self {
            JPolicy::FloorT => floor_t,
            JPolicy::FloorTCapped(cap) => floor_t.min(cap),
            JPolicy::Fixed(j) => j,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub truth: SmoothnessSpec,
    /// Number of Fourier coefficients used to represent the truth.
    #[serde(default = "default_truth_j")]
    pub truth_j: usize,
    pub t_list: Vec<f64>,
    pub replicates: usize,
    pub seed_base: u64,
    pub grid: GridConfig,
    /// Euler step; `None` means `min(0.01, T^{-1/2}/10)` per horizon.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    pub j_policy: JPolicy,
    pub output_dir: PathBuf,
    /// Posterior draws for the credible radius and ball probability.
    #[serde(default = "default_mc")]
    pub posterior_samples: usize,
    /// Fixed-λ posteriors evaluated on the same data for comparison.
    #[serde(default)]
    pub comparators: Vec<HyperParam>,
}

fn default_truth_j() -> usize {
    256
}

fn default_mc() -> usize {
    2000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.replicates < 1 {
            return bad("replicates must be >= 1".into());
        }
        if self.t_list.is_empty() {
            return bad("t_list must not be empty".into());
        }
        if self.t_list.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("t_list must be strictly increasing: {:?}", self.t_list));
        }
        if self.truth_j == 0 {
            return bad("truth_j must be >= 1".into());
        }
        if self.posterior_samples == 0 {
            return bad("posterior_samples must be >= 1".into());
        }
        if let JPolicy::Fixed(0) | JPolicy::FloorTCapped(0) = self.j_policy {
            return bad("J must be >= 1".into());
        }
        ebdrift::make_sobolev_truth(&self.truth, 1).map_err(validation)?;
        for &t in &self.t_list {
            self.sim_config(t, 0).validate().map_err(validation)?;
            ebdrift::build_grid(
                self.grid.grid_case(),
                t,
                self.grid.delta,
                self.grid.coarsen_s,
            )
            .map_err(validation)?;
        }
        for c in &self.comparators {
            HyperParam::new(c.alpha, c.s).map_err(validation)?;
            if !(c.s > 0.0) {
                return bad(format!("comparator scale must be positive, got {}", c.s));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> PeriodicFunction {
        ebdrift::make_sobolev_truth(&self.truth, self.truth_j)
            .expect("validated truth spec")
            .with_label(self.truth.descriptor(self.truth_j))
    }

    pub fn sim_config(&self, horizon: f64, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::new(horizon, seed);
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        cfg.x0 = self.x0;
        cfg
    }
}

pub(crate) fn validation(e: ebdrift::Error) -> CliError {
    CliError::Validation(e.to_string())
}

/// Parse a truth descriptor.
///
/// Accepted forms: `beta=1[,margin=0.1][,amplitude=1][,seed=7]` for a
/// Sobolev truth (a seed switches to random signs), `coeffs=0;0.5` for
/// explicit coefficients, and `zero`.
pub fn parse_truth(text: &str, j: usize) -> Result<PeriodicFunction, String> {
    let text = text.trim();
    if text == "zero" {
        return Ok(PeriodicFunction::zero(1).with_label("zero"));
    }
    if let Some(list) = text.strip_prefix("coeffs=") {
        let coeffs = list
            .split(';')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad coefficient {v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err("coefficients must be finite".into());
        }
        return Ok(PeriodicFunction::new(coeffs).with_label(format!("coeffs({list})")));
    }
    let spec = parse_smoothness(text)?;
    let f = ebdrift::make_sobolev_truth(&spec, j).map_err(|e| e.to_string())?;
    Ok(f.with_label(spec.descriptor(j)))
}

pub fn parse_smoothness(text: &str) -> Result<SmoothnessSpec, String> {
    let mut beta = None;
    let mut spec = SmoothnessSpec::deterministic(1.0);
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
        let num = || {
            value
                .parse::<f64>()
                .map_err(|e| format!("bad value for {key}: {e}"))
        };
        match key {
            "beta" => beta = Some(num()?),
            "margin" => spec.margin = num()?,
            "amplitude" => spec.amplitude = num()?,
            "seed" => {
                let seed = value.parse().map_err(|e| format!("bad seed: {e}"))?;
                spec.mode = TruthMode::SeededRandom { seed };
            }
            _ => return Err(format!("unknown truth key {key:?}")),
        }
    }
    spec.beta = beta.ok_or("truth descriptor needs beta=...")?;
    Ok(spec)
}

/// Parse `full`, `stride:M` / `M`, or `target:N`.
pub fn parse_coarsening(text: &str) -> Result<Coarsening, String> {
    let bad = |e: std::num::ParseIntError| format!("bad coarsening {text:?}: {e}");
    match text.split_once(':') {
        None if text == "full" => Ok(Coarsening::Full),
        None => Ok(Coarsening::Stride(text.parse().map_err(bad)?)),
        Some(("stride", m)) => Ok(Coarsening::Stride(m.parse().map_err(bad)?)),
        Some(("target", n)) => Ok(Coarsening::Target(n.parse().map_err(bad)?)),
        _ => Err(format!("bad coarsening {text:?} (full, stride:M or target:N)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_descriptors() {
        let f = parse_truth("beta=1", 3).unwrap();
        assert_eq!(f.coeff(1), 1.0);
        assert!((f.coeff(2) - 2f64.powf(-1.6)).abs() < 1e-15);
        let f = parse_truth("coeffs=0;0.5", 8).unwrap();
        assert_eq!(f.coeffs(), &[0.0, 0.5]);
        assert_eq!(parse_truth("zero", 8).unwrap().l2_norm(), 0.0);
        assert!(parse_truth("margin=0.1", 3).is_err());
        assert!(parse_truth("beta=1,margin=0", 3).is_err());
        assert!(parse_truth("beta=1,bogus=2", 3).is_err());
    }

    #[test]
    fn coarsening_forms() {
        assert_eq!(parse_coarsening("full").unwrap(), Coarsening::Full);
        assert_eq!(parse_coarsening("4").unwrap(), Coarsening::Stride(4));
        assert_eq!(parse_coarsening("target:50").unwrap(), Coarsening::Target(50));
        assert!(parse_coarsening("nope:3").is_err());
    }

    #[test]
    fn j_policy_resolution() {
        assert_eq!(JPolicy::FloorT.resolve(100.7), 100);
        assert_eq!(JPolicy::FloorTCapped(64).resolve(8192.0), 64);
        assert_eq!(JPolicy::FloorTCapped(64).resolve(20.0), 20);
        assert_eq!(JPolicy::Fixed(7).resolve(8192.0), 7);
    }

    #[test]
    fn config_round_trips_through_json() {
        let json = r#"{
            "truth": {"beta": 1.0, "margin": 0.1, "amplitude": 1.0, "mode": {"kind": "deterministic"}},
            "t_list": [256, 512],
            "replicates": 2,
            "seed_base": 11,
            "grid": {"case": "2prime"},
            "j_policy": {"floor-t-capped": 64},
            "output_dir": "out"
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid.delta, DEFAULT_DELTA);
        assert_eq!(cfg.grid.coarsen_s, Coarsening::Target(200));
        let again: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn validation_rejects_bad_lists() {
        let json = r#"{
            "truth": {"beta": 1.0, "margin": 0.1, "amplitude": 1.0, "mode": {"kind": "deterministic"}},
            "t_list": [512, 256], "replicates": 2, "seed_base": 1,
            "grid": {"case": "2prime"}, "j_policy": "floor-t", "output_dir": "out"
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.validate().is_err());
    }
}
