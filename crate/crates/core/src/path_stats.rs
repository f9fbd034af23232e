//! Girsanov sufficient statistics of a path in the truncated basis.
//!
//! For `θ = Σ θ_k φ_k` the log density of `P^θ` relative to Wiener measure,
//! discretized with the left-endpoint (Itô) rule, is `θᵀb − ½θᵀGθ` with
//!
//! ```text
//! b_k  = Σ_i φ_k(X_i) (X_{i+1} − X_i)
//! G_jk = Σ_i φ_j(X_i) φ_k(X_i) dt
//! ```
//!
//! `G` is assembled from the empirical Fourier transform of the occupation
//! measure: products of basis functions are sums of basis functions at the
//! sum and difference frequencies, so only `C_m = Σ cos(2πmX_i)dt` and
//! `S_m = Σ sin(2πmX_i)dt` for `m ≤ 2·⌈J/2⌉` are needed. This makes the
//! accumulation `O(N·J)` instead of `O(N·J²)`. The dense rank-one route is
//! kept as [`sufficient_stats_dense`] and the two agree to rounding.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::periodic_basis::{basis_vector, frequency, reduce_mod1, PeriodicFunction};
use crate::sde_sim::SamplePath;

/// Fixed number of path segments; reduction order depends only on this.
const SEGMENTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub b: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub horizon: f64,
    pub dt: f64,
}

impl SuffStats {
    pub fn new(b: DVector<f64>, gram: DMatrix<f64>, horizon: f64, dt: f64) -> Result<Self> {
        let stats = Self {
            b,
            gram,
            horizon,
            dt,
        };
        stats.validate()?;
        Ok(stats)
    }

    /// Stats of an empty observation (`b = 0`, `G = 0`).
    pub fn empty(j: usize, horizon: f64) -> Self {
        Self {
            b: DVector::zeros(j),
            gram: DMatrix::zeros(j, j),
            horizon,
            dt: 0.0,
        }
    }

    pub fn truncation(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.b.len();
        if j == 0 {
            return Err(Error::InvalidArgument("J must be >= 1".into()));
        }
        if self.gram.nrows() != j || self.gram.ncols() != j {
            return Err(Error::InvalidArgument(format!(
                "G is {}x{}, expected {j}x{j}",
                self.gram.nrows(),
                self.gram.ncols()
            )));
        }
        if self.b.iter().chain(self.gram.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in stats".into()));
        }
        let scale = self.gram.amax().max(f64::MIN_POSITIVE);
        for r in 0..j {
            for c in 0..r {
                if (self.gram[(r, c)] - self.gram[(c, r)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "G not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stats restricted to the first `j` coordinates.
    pub fn truncate(&self, j: usize) -> Result<Self> {
        if j == 0 || j > self.truncation() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate J = {} stats to {j}",
                self.truncation()
            )));
        }
        Ok(Self {
            b: self.b.rows(0, j).into_owned(),
            gram: self.gram.view((0, 0), (j, j)).into_owned(),
            horizon: self.horizon,
            dt: self.dt,
        })
    }

    /// `ΔᵀGΔ` for a coefficient vector no longer than `J`.
    pub fn gram_form(&self, delta: &[f64]) -> f64 {
        let n = delta.len().min(self.truncation());
        let mut acc = 0.0;
        for r in 0..n {
            if delta[r] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for c in 0..n {
                row += self.gram[(r, c)] * delta[c];
            }
            acc += delta[r] * row;
        }
        acc
    }
}

fn check_truncation(path: &SamplePath, j: usize) -> Result<()> {
    path.validate()?;
    if j == 0 {
        return Err(Error::InvalidArgument("J must be >= 1".into()));
    }
    let limit = 10.0 * path.horizon;
    if j as f64 > limit {
        return Err(Error::TruncationTooLarge { j, limit });
    }
    Ok(())
}

fn segment_bounds(steps: usize) -> Vec<(usize, usize)> {
    let segs = SEGMENTS.min(steps).max(1);
    (0..segs)
        .map(|s| (s * steps / segs, (s + 1) * steps / segs))
        .collect()
}

/// Sum per-segment partial vectors along a fixed binary tree.
fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Sufficient statistics via the occupation-spectrum route.
pub fn sufficient_stats(path: &SamplePath, j: usize) -> Result<SuffStats> {
    check_truncation(path, j)?;
    let m_max = j.div_ceil(2);
    let spec_len = 2 * m_max + 1;
    // layout: [b (j) | C_0..C_{2m} | S_0..S_{2m}]
    let width = j + 2 * spec_len;
    let xs = &path.values;
    let parts: Vec<Vec<f64>> = segment_bounds(path.steps())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = vec![0.0; width];
            let (b, rest) = acc.split_at_mut(j);
            let (cs, ss) = rest.split_at_mut(spec_len);
            for i in lo..hi {
                let x = xs[i];
                let dx = xs[i + 1] - x;
                let theta = std::f64::consts::TAU * reduce_mod1(x);
                let (zs, zc) = theta.sin_cos();
                let (mut ws, mut wc) = (0.0_f64, 1.0_f64);
                cs[0] += 1.0;
                for m in 1..spec_len {
                    let s = ws * zc + wc * zs;
                    let c = wc * zc - ws * zs;
                    ws = s;
                    wc = c;
                    cs[m] += wc;
                    ss[m] += ws;
                    if m <= m_max {
                        let k = 2 * m - 2;
                        b[k] += ws * dx;
                        if k + 1 < j {
                            b[k + 1] += wc * dx;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let total = pairwise_sum(parts);
    let sqrt2 = std::f64::consts::SQRT_2;
    let b = DVector::from_iterator(j, total[..j].iter().map(|v| sqrt2 * v));
    let dt = path.dt;
    let cs: Vec<f64> = total[j..j + spec_len].iter().map(|v| v * dt).collect();
    let ss: Vec<f64> = total[j + spec_len..].iter().map(|v| v * dt).collect();
    let sin_at = |m: i64| -> f64 {
        if m >= 0 {
            ss[m as usize]
        } else {
            -ss[(-m) as usize]
        }
    };
    let mut gram = DMatrix::zeros(j, j);
    for r in 0..j {
        let (p, p_sin) = frequency(r + 1);
        for c in 0..=r {
            let (q, q_sin) = frequency(c + 1);
            let diff = (p as i64 - q as i64).unsigned_abs() as usize;
            let sum = p + q;
            let v = match (p_sin, q_sin) {
                (true, true) => cs[diff] - cs[sum],
                (false, false) => cs[diff] + cs[sum],
                (true, false) => ss[sum] + sin_at(p as i64 - q as i64),
                (false, true) => ss[sum] + sin_at(q as i64 - p as i64),
            };
            gram[(r, c)] = v;
            gram[(c, r)] = v;
        }
    }
    Ok(SuffStats {
        b,
        gram,
        horizon: path.horizon,
        dt,
    })
}

/// Sufficient statistics by direct rank-one accumulation, `O(N·J²)`.
pub fn sufficient_stats_dense(path: &SamplePath, j: usize) -> Result<SuffStats> {
    check_truncation(path, j)?;
    let xs = &path.values;
    let width = j + j * (j + 1) / 2;
    let parts: Vec<Vec<f64>> = segment_bounds(path.steps())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = vec![0.0; width];
            let mut phi = vec![0.0; j];
            for i in lo..hi {
                basis_vector(xs[i], &mut phi);
                let dx = xs[i + 1] - xs[i];
                for k in 0..j {
                    acc[k] += phi[k] * dx;
                }
                let mut idx = j;
                for r in 0..j {
                    for c in 0..=r {
                        acc[idx] += phi[r] * phi[c];
                        idx += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let total = pairwise_sum(parts);
    let mut gram = DMatrix::zeros(j, j);
    let mut idx = j;
    for r in 0..j {
        for c in 0..=r {
            gram[(r, c)] = total[idx] * path.dt;
            gram[(c, r)] = gram[(r, c)];
            idx += 1;
        }
    }
    Ok(SuffStats {
        b: DVector::from_column_slice(&total[..j]),
        gram,
        horizon: path.horizon,
        dt: path.dt,
    })
}

/// `θᵀb − ½θᵀGθ`.
pub fn log_likelihood(theta: &PeriodicFunction, stats: &SuffStats) -> Result<f64> {
    if theta.truncation() > stats.truncation() {
        return Err(Error::Precondition(format!(
            "theta has J = {} > stats J = {}",
            theta.truncation(),
            stats.truncation()
        )));
    }
    let c = theta.coeffs();
    let linear: f64 = c.iter().zip(stats.b.iter()).map(|(a, b)| a * b).sum();
    Ok(linear - 0.5 * stats.gram_form(c))
}

/// Discretized path functional `Σ θ(X_i)ΔX_i − ½ Σ θ(X_i)² dt`.
pub fn path_log_likelihood(theta: &PeriodicFunction, path: &SamplePath) -> f64 {
    let mut stoch = 0.0;
    let mut quad = 0.0;
    for w in path.values.windows(2) {
        let v = theta.eval(w[0]);
        stoch += v * (w[1] - w[0]);
        quad += v * v;
    }
    stoch - 0.5 * quad * path.dt
}

/// `h(θ, θ′) = √(Σ_i (θ(X_i) − θ′(X_i))² dt)`.
pub fn random_hellinger(
    theta: &PeriodicFunction,
    theta_prime: &PeriodicFunction,
    path: &SamplePath,
) -> f64 {
    let delta = theta.sub(theta_prime);
    let sum: f64 = path.values[..path.values.len() - 1]
        .iter()
        .map(|&x| delta.eval(x).powi(2))
        .sum();
    (sum * path.dt).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic_basis::random_function;
    use crate::sde_sim::{simulate_path, SimConfig};

    fn uniform_sweep(n: usize, horizon: f64) -> SamplePath {
        SamplePath {
            dt: horizon / n as f64,
            values: (0..=n).map(|i| i as f64 / n as f64).collect(),
            horizon,
            seed: 0,
            drift_id: "sweep".into(),
        }
    }

    fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn uniform_sweep_gram_is_identity() {
        let path = uniform_sweep(1_000_000, 1.0);
        let stats = sufficient_stats(&path, 4).unwrap();
        let target = DMatrix::<f64>::identity(4, 4) * path.horizon;
        assert!((&stats.gram - &target).amax() < 1e-3);
    }

    #[test]
    fn spectral_matches_dense() {
        let theta = PeriodicFunction::new(vec![0.4, -0.3, 0.2]);
        let path = simulate_path(&theta, &SimConfig::new(50.0, 3)).unwrap();
        for j in [1, 2, 5, 8, 13] {
            let a = sufficient_stats(&path, j).unwrap();
            let b = sufficient_stats_dense(&path, j).unwrap();
            assert!(rel_diff(&a.gram, &b.gram) < 1e-11, "J={j}");
            assert!((&a.b - &b.b).norm() <= 1e-11 * b.b.norm().max(1.0), "J={j}");
        }
    }

    #[test]
    fn stats_are_bit_stable() {
        let theta = PeriodicFunction::new(vec![0.2, 0.1]);
        let path = simulate_path(&theta, &SimConfig::new(30.0, 9)).unwrap();
        let a = sufficient_stats(&path, 7).unwrap();
        let b = sufficient_stats(&path, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_guard() {
        let path = uniform_sweep(100, 1.0);
        assert!(matches!(
            sufficient_stats(&path, 11),
            Err(Error::TruncationTooLarge { .. })
        ));
        assert!(sufficient_stats(&path, 10).is_ok());
        assert!(sufficient_stats(&path, 0).is_err());
    }

    #[test]
    fn gram_is_psd() {
        let path = simulate_path(&PeriodicFunction::zero(1), &SimConfig::new(40.0, 2)).unwrap();
        let stats = sufficient_stats(&path, 30).unwrap();
        let eig = stats.gram.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let norm = eig.eigenvalues.amax();
        assert!(min >= -1e-8 * norm, "min eigenvalue {min}");
    }

    #[test]
    fn zero_drift_long_path_gram_diagonal() {
        let cfg = SimConfig::new(2000.0, 17).with_dt(0.01);
        let path = simulate_path(&PeriodicFunction::zero(1), &cfg).unwrap();
        let stats = sufficient_stats(&path, 4).unwrap();
        for k in 0..4 {
            let r = stats.gram[(k, k)] / path.horizon;
            assert!((0.8..=1.2).contains(&r), "G_kk/T = {r}");
        }
    }

    #[test]
    fn zero_drift_b_has_zero_mean() {
        let reps = 200;
        let horizon = 10.0;
        let b1: Vec<f64> = (0..reps)
            .map(|r| {
                let p = simulate_path(&PeriodicFunction::zero(1), &SimConfig::new(horizon, 500 + r))
                    .unwrap();
                sufficient_stats(&p, 1).unwrap().b[0]
            })
            .collect();
        let mean = b1.iter().sum::<f64>() / reps as f64;
        let var = b1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!(mean.abs() < 3.0 * (var / reps as f64).sqrt());
    }

    #[test]
    fn log_likelihood_examples() {
        let theta0 = PeriodicFunction::new(vec![0.3, 0.0, -0.2]);
        let path = simulate_path(&theta0, &SimConfig::new(20.0, 4)).unwrap();
        let stats = sufficient_stats(&path, 5).unwrap();
        assert_eq!(log_likelihood(&PeriodicFunction::zero(5), &stats).unwrap(), 0.0);

        let theta = random_function(5, 0.5, 8);
        let tb: f64 = theta.coeffs().iter().zip(stats.b.iter()).map(|(a, b)| a * b).sum();
        let q = stats.gram_form(theta.coeffs());
        let twice = log_likelihood(&theta.scale(2.0), &stats).unwrap();
        assert!((twice - (2.0 * tb - 2.0 * q)).abs() < 1e-10 * twice.abs().max(1.0));

        assert!(log_likelihood(&random_function(6, 1.0, 1), &stats).is_err());
    }

    #[test]
    fn quadratic_form_matches_path_functional() {
        let theta0 = PeriodicFunction::new(vec![0.5, -0.1]);
        let path = simulate_path(&theta0, &SimConfig::new(30.0, 12)).unwrap();
        let stats = sufficient_stats(&path, 5).unwrap();
        for seed in 0..10 {
            let theta = random_function(5, 1.0, seed);
            let a = log_likelihood(&theta, &stats).unwrap();
            let b = path_log_likelihood(&theta, &path);
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn hellinger_examples() {
        let path = simulate_path(&PeriodicFunction::zero(1), &SimConfig::new(20.0, 3)).unwrap();
        let f = random_function(4, 1.0, 1);
        let g = random_function(4, 1.0, 2);
        assert_eq!(random_hellinger(&f, &f, &path), 0.0);
        assert_eq!(random_hellinger(&f, &g, &path), random_hellinger(&g, &f, &path));

        let stats = sufficient_stats(&path, 4).unwrap();
        let h = random_hellinger(&f, &g, &path);
        let q = stats.gram_form(f.sub(&g).coeffs());
        assert!((h * h - q).abs() <= 1e-10 * q);

        let k = random_function(4, 1.0, 3);
        assert!(
            random_hellinger(&f, &k, &path)
                <= random_hellinger(&f, &g, &path) + random_hellinger(&g, &k, &path) + 1e-12
        );
    }

    #[test]
    fn hellinger_of_phi1_under_zero_drift() {
        let cfg = SimConfig::new(2000.0, 23).with_dt(0.01);
        let path = simulate_path(&PeriodicFunction::zero(1), &cfg).unwrap();
        let phi1 = PeriodicFunction::basis(1, 1).unwrap();
        let h = random_hellinger(&phi1, &PeriodicFunction::zero(1), &path);
        let r = h / path.horizon.sqrt();
        assert!((0.8..=1.2).contains(&r), "h/√T = {r}");
    }

    #[test]
    fn refinement_changes_stats_little() {
        use crate::sde_sim::{brownian_increments, simulate_with_increments};
        let theta0 = PeriodicFunction::new(vec![0.6, -0.4, 0.3]);
        let horizon = 6000.0;
        let dt_fine = 0.0005;
        let fine_inc = brownian_increments((horizon / dt_fine) as usize, dt_fine, 77);
        let coarse_inc: Vec<f64> = fine_inc.chunks(2).map(|c| c[0] + c[1]).collect();
        let fine = simulate_with_increments(&theta0, 0.0, dt_fine, &fine_inc).unwrap();
        let coarse = simulate_with_increments(&theta0, 0.0, 2.0 * dt_fine, &coarse_inc).unwrap();
        let fp = SamplePath::from_values(fine, dt_fine, horizon, 77, "f").unwrap();
        let cp = SamplePath::from_values(coarse, 2.0 * dt_fine, horizon, 77, "c").unwrap();
        let sf = sufficient_stats(&fp, 4).unwrap();
        let sc = sufficient_stats(&cp, 4).unwrap();
        let (dg, db) = (rel_diff(&sc.gram, &sf.gram), (&sc.b - &sf.b).norm() / sf.b.norm());
        assert!(dg < 0.02 && db < 0.02, "G {dg}, b {db}");
    }
}
