//! Real Fourier basis of the circle and finite Fourier series.
//!
//! Index convention (1-based, constant excluded):
//! `φ_{2m-1}(x) = √2 sin(2πmx)`, `φ_{2m}(x) = √2 cos(2πmx)`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const TWO_PI: f64 = 2.0 * PI;

/// Reduce `x` to its representative in `[0, 1)`.
#[inline]
pub fn reduce_mod1(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Frequency `m` and whether the basis function is a sine, for 1-based `k`.
#[inline]
pub(crate) fn frequency(k: usize) -> (usize, bool) {
    ((k + 1) / 2, k % 2 == 1)
}

pub fn basis_eval(k: usize, x: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroBasisIndex);
    }
    let (m, is_sin) = frequency(k);
    let arg = TWO_PI * reduce_mod1(m as f64 * reduce_mod1(x));
    Ok(if is_sin {
        SQRT_2 * arg.sin()
    } else {
        SQRT_2 * arg.cos()
    })
}

/// Fill `out[k-1] = φ_k(x)` for `k = 1..=out.len()`.
///
/// Uses a rotation recurrence `e^{2πimx} = e^{2πix}·e^{2πi(m-1)x}`; the
/// accumulated rounding error grows like `m·ε`, which stays far below
/// `1e-12` at the truncation levels used here.
pub fn basis_vector(x: f64, out: &mut [f64]) {
    let theta = TWO_PI * reduce_mod1(x);
    let (zs, zc) = theta.sin_cos();
    let (mut ws, mut wc) = (0.0_f64, 1.0_f64);
    for pair in out.chunks_mut(2) {
        let s = ws * zc + wc * zs;
        let c = wc * zc - ws * zs;
        ws = s;
        wc = c;
        pair[0] = SQRT_2 * ws;
        if pair.len() > 1 {
            pair[1] = SQRT_2 * wc;
        }
    }
}

/// A zero-mean 1-periodic function `Σ_{k=1}^{J} θ_k φ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicFunction {
    coeffs: Vec<f64>,
    #[serde(default)]
    label: Option<String>,
}

impl PeriodicFunction {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            label: None,
        }
    }

    pub fn zero(j: usize) -> Self {
        Self::new(vec![0.0; j])
    }

    /// The single basis function `φ_k` (1-based).
    pub fn basis(k: usize, j: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroBasisIndex);
        }
        let mut coeffs = vec![0.0; j.max(k)];
        coeffs[k - 1] = 1.0;
        Ok(Self::new(coeffs))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Provenance descriptor; falls back to the truncation level.
    pub fn descriptor(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("fourier(J={})", self.coeffs.len()))
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient `θ_k` (1-based), zero beyond the truncation level.
    pub fn coeff(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.coeffs.get(k - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let theta = TWO_PI * reduce_mod1(x);
        let (zs, zc) = theta.sin_cos();
        let (mut ws, mut wc) = (0.0_f64, 1.0_f64);
        let mut acc = 0.0;
        for pair in self.coeffs.chunks(2) {
            let s = ws * zc + wc * zs;
            let c = wc * zc - ws * zs;
            ws = s;
            wc = c;
            acc += pair[0] * ws;
            if pair.len() > 1 {
                acc += pair[1] * wc;
            }
        }
        SQRT_2 * acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Coefficient-wise `self - other`, zero-padding the shorter one.
    pub fn sub(&self, other: &PeriodicFunction) -> PeriodicFunction {
        let n = self.coeffs.len().max(other.coeffs.len());
        PeriodicFunction::new((1..=n).map(|k| self.coeff(k) - other.coeff(k)).collect())
    }

    pub fn scale(&self, factor: f64) -> PeriodicFunction {
        PeriodicFunction::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    /// Copy truncated or zero-padded to exactly `j` coefficients.
    pub fn resized(&self, j: usize) -> PeriodicFunction {
        PeriodicFunction::new((1..=j).map(|k| self.coeff(k)).collect())
    }

    /// `Σ k^{2β} θ_k²`.
    pub fn sobolev_norm_sq(&self, beta: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| ((i + 1) as f64).powf(2.0 * beta) * c * c)
            .sum()
    }
}

pub fn eval_function(f: &PeriodicFunction, x: f64) -> f64 {
    f.eval(x)
}

/// `‖f − g‖₂`, computed on coefficients (Parseval).
pub fn l2_distance(f: &PeriodicFunction, g: &PeriodicFunction) -> f64 {
    let n = f.truncation().max(g.truncation());
    (1..=n)
        .map(|k| {
            let d = f.coeff(k) - g.coeff(k);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TruthMode {
    Deterministic,
    SeededRandom { seed: u64 },
}

/// Recipe for a β-Sobolev ground truth with coefficients
/// `amplitude · k^{-1/2-β-margin}` (optionally with random signs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub beta: f64,
    pub margin: f64,
    pub amplitude: f64,
    pub mode: TruthMode,
}

impl SmoothnessSpec {
    pub const DEFAULT_MARGIN: f64 = 0.1;

    pub fn deterministic(beta: f64) -> Self {
        Self {
            beta,
            margin: Self::DEFAULT_MARGIN,
            amplitude: 1.0,
            mode: TruthMode::Deterministic,
        }
    }

    pub fn descriptor(&self, j: usize) -> String {
        let mode = match self.mode {
            TruthMode::Deterministic => "deterministic".to_string(),
            TruthMode::SeededRandom { seed } => format!("seeded-random(seed={seed})"),
        };
        format!(
            "sobolev(beta={},margin={},amplitude={},mode={},J={})",
            self.beta, self.margin, self.amplitude, mode, j
        )
    }
}

pub fn make_sobolev_truth(spec: &SmoothnessSpec, j: usize) -> Result<PeriodicFunction> {
    if !(spec.beta > 0.0) || !spec.beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive, got {}",
            spec.beta
        )));
    }
    if !(spec.margin > 0.0) || !spec.margin.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive (margin 0 gives a divergent Sobolev series), got {}",
            spec.margin
        )));
    }
    if j == 0 {
        return Err(Error::InvalidArgument("truncation J must be >= 1".into()));
    }
    let exponent = -0.5 - spec.beta - spec.margin;
    let mut coeffs: Vec<f64> = (1..=j)
        .map(|k| spec.amplitude * (k as f64).powf(exponent))
        .collect();
    if let TruthMode::SeededRandom { seed } = spec.mode {
        let mut rng = rng::stream(seed);
        for c in coeffs.iter_mut() {
            if rng.random::<bool>() {
                *c = -*c;
            }
        }
    }
    Ok(PeriodicFunction::new(coeffs).with_label(spec.descriptor(j)))
}

/// A random function with i.i.d. `N(0, scale²)` coefficients; used by tests
/// and diagnostics that need generic members of the truncated span.
pub fn random_function(j: usize, scale: f64, seed: u64) -> PeriodicFunction {
    let mut rng = rng::stream(seed);
    PeriodicFunction::new(
        (0..j)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Periodic trapezoid rule on `n` equispaced nodes.
    fn trapezoid(n: usize, f: impl Fn(f64) -> f64) -> f64 {
        (0..n).map(|i| f(i as f64 / n as f64)).sum::<f64>() / n as f64
    }

    #[test]
    fn basis_examples() {
        assert_abs_diff_eq!(basis_eval(1, 0.25).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(basis_eval(2, 0.0).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(basis_eval(4, 0.25).unwrap(), -SQRT_2, epsilon = 1e-15);
        assert!(matches!(basis_eval(0, 0.1), Err(Error::ZeroBasisIndex)));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(PeriodicFunction::new(vec![0.0]).eval(0.3), 0.0);
        let e1 = PeriodicFunction::new(vec![1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(e1.eval(0.25), SQRT_2, epsilon = 1e-15);
        let f = PeriodicFunction::new(vec![0.5, -0.2]);
        let expected = 0.5 * SQRT_2 * (0.2 * PI).sin() - 0.2 * SQRT_2 * (0.2 * PI).cos();
        assert_abs_diff_eq!(f.eval(0.1), expected, epsilon = 1e-14);
    }

    #[test]
    fn recurrence_matches_direct_basis() {
        let mut out = vec![0.0; 41];
        for &x in &[0.0, 0.013, 0.37, 0.5, 0.999, 3.7, -2.2] {
            basis_vector(x, &mut out);
            for (i, v) in out.iter().enumerate() {
                assert_abs_diff_eq!(*v, basis_eval(i + 1, x).unwrap(), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn sobolev_truth_examples() {
        let spec = SmoothnessSpec::deterministic(1.0);
        let f = make_sobolev_truth(&spec, 3).unwrap();
        let expected = [1.0, 2f64.powf(-1.6), 3f64.powf(-1.6)];
        for (a, b) in f.coeffs().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }

        let zero = make_sobolev_truth(
            &SmoothnessSpec {
                amplitude: 0.0,
                ..spec
            },
            5,
        )
        .unwrap();
        assert!(zero.coeffs().iter().all(|c| *c == 0.0));

        let bad = SmoothnessSpec {
            margin: 0.0,
            ..spec
        };
        assert!(make_sobolev_truth(&bad, 3).is_err());
    }

    #[test]
    fn sobolev_partial_sums_converge() {
        // Σ k^{2β}θ_k² = Σ k^{-1-2·margin}: with margin 0.5 the J = 10³ and
        // J = 10⁴ partial sums agree to well under 1%.
        let spec = SmoothnessSpec {
            margin: 0.5,
            ..SmoothnessSpec::deterministic(1.0)
        };
        let a = make_sobolev_truth(&spec, 1_000).unwrap().sobolev_norm_sq(1.0);
        let b = make_sobolev_truth(&spec, 10_000).unwrap().sobolev_norm_sq(1.0);
        assert!((b - a) / b < 0.01, "partial sums {a} vs {b}");

        // The default margin 0.1 still converges, with geometrically shrinking
        // tails over decades: tail(10^{d+1}) / tail(10^d) < 1.
        let spec = SmoothnessSpec::deterministic(1.0);
        let f = make_sobolev_truth(&spec, 100_000).unwrap();
        let terms: Vec<f64> = f
            .coeffs()
            .iter()
            .enumerate()
            .map(|(i, c)| ((i + 1) as f64).powi(2) * c * c)
            .collect();
        let tail = |from: usize| terms[from..].iter().sum::<f64>();
        for d in [10, 100, 1000] {
            assert!(tail(10 * d) / tail(d) < 1.0);
        }
    }

    #[test]
    fn seeded_random_truth_flips_signs_only() {
        let spec = SmoothnessSpec {
            mode: TruthMode::SeededRandom { seed: 3 },
            ..SmoothnessSpec::deterministic(0.8)
        };
        let f = make_sobolev_truth(&spec, 50).unwrap();
        let g = make_sobolev_truth(&spec, 50).unwrap();
        assert_eq!(f, g);
        let det = make_sobolev_truth(&SmoothnessSpec::deterministic(0.8), 50).unwrap();
        assert!(f.coeffs().iter().any(|c| *c < 0.0));
        for (a, b) in f.coeffs().iter().zip(det.coeffs()) {
            assert_eq!(a.abs(), *b);
        }
    }

    #[test]
    fn l2_distance_examples() {
        let f = random_function(5, 1.0, 1);
        assert_eq!(l2_distance(&f, &f), 0.0);
        let e1 = PeriodicFunction::basis(1, 1).unwrap();
        assert_abs_diff_eq!(l2_distance(&e1, &e1.scale(-1.0)), 2.0, epsilon = 1e-15);
        // zero padding
        let short = PeriodicFunction::new(vec![1.0]);
        let long = PeriodicFunction::new(vec![1.0, 0.0, 2.0]);
        assert_abs_diff_eq!(l2_distance(&short, &long), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn l2_distance_matches_quadrature() {
        for seed in 0..5 {
            let f = random_function(5, 1.0, 100 + seed);
            let g = random_function(5, 1.0, 200 + seed);
            let quad = trapezoid(10_000, |x| (f.eval(x) - g.eval(x)).powi(2));
            assert_abs_diff_eq!(l2_distance(&f, &g).powi(2), quad, epsilon = 1e-6);
        }
    }

    #[test]
    fn orthonormality() {
        let n = 100_000;
        for j in 1..=8 {
            for k in 1..=8 {
                let q = trapezoid(n, |x| {
                    basis_eval(j, x).unwrap() * basis_eval(k, x).unwrap()
                });
                let expected = if j == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(q, expected, epsilon = 1e-8);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn parseval(j in 1usize..=32, seed in any::<u64>()) {
            let f = random_function(j, 1.0, seed);
            let zero = PeriodicFunction::zero(1);
            let quad = trapezoid(4096, |x| f.eval(x).powi(2));
            let d = l2_distance(&f, &zero).powi(2);
            prop_assert!((d - quad).abs() <= 1e-6 * d.max(1.0));
        }

        #[test]
        fn periodicity(x in -10.0f64..10.0, seed in any::<u64>()) {
            let f = random_function(12, 1.0, seed);
            prop_assert!((f.eval(x) - f.eval(x + 1.0)).abs() <= 1e-12);
        }
    }
}
