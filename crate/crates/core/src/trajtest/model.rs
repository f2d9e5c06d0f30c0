use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DVector;

use super::covariance::{ar1_covariance, cholesky_with_jitter, ln_det, sqexp_covariance};
use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;

/// A subject's benchmarked scores at strictly increasing calendar times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub subject: String,
    times: Vec<i64>,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(subject: impl Into<String>, times: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        let subject = subject.into();
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Domain(format!(
                "trajectory `{subject}` needs matching nonempty times and values"
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!("trajectory `{subject}` times are not strictly increasing")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("trajectory `{subject}` has non-finite values")));
        }
        Ok(Trajectory { subject, times, values })
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// AR(1) noise parameters: coefficient `φ` and innovation variance `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub phi: f64,
    pub v: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.phi) || !(self.v > 0.0) || !self.v.is_finite() {
            return Err(Error::Domain(format!("invalid noise parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSchedule {
    /// Total sweeps, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for TrajSchedule {
    fn default() -> Self {
        TrajSchedule { sweeps: 5_000, burn_in: 1_000, thin: 2, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajTestConfig {
    /// Inverse-gamma prior on `v`.
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// Gaussian-process slab: amplitude `τ²` and length-scale `ℓ` (periods).
    pub gp_amplitude: f64,
    pub gp_length_scale: f64,
    /// Beta prior on the mixture weight `w`.
    pub weight_prior: (f64, f64),
    /// Number of points on the griddy-Gibbs grid for `φ`.
    pub phi_grid: usize,
    pub horizon: usize,
    pub min_history: usize,
    pub schedule: TrajSchedule,
}

impl Default for TrajTestConfig {
    fn default() -> Self {
        TrajTestConfig {
            ig_shape: 2.5,
            ig_scale: 2.5,
            gp_amplitude: 0.25,
            gp_length_scale: 5.0,
            weight_prior: (1.0, 1.0),
            phi_grid: 100,
            horizon: 5,
            min_history: 10,
            schedule: TrajSchedule::default(),
        }
    }
}

impl TrajTestConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ig_shape", self.ig_shape),
            ("ig_scale", self.ig_scale),
            ("gp_amplitude", self.gp_amplitude),
            ("gp_length_scale", self.gp_length_scale),
            ("weight_prior.0", self.weight_prior.0),
            ("weight_prior.1", self.weight_prior.1),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.phi_grid == 0 {
            return Err(Error::Config("phi grid needs at least one point".into()));
        }
        let s = &self.schedule;
        if s.sweeps <= s.burn_in || s.thin == 0 {
            return Err(Error::Config(format!(
                "schedule needs sweeps > burn-in and thin >= 1, got {s:?}"
            )));
        }
        Ok(())
    }

    /// Uniform grid on (0,1) with spacing `1/k`, offset half a cell from
    /// both ends.
    pub fn phi_grid_points(&self) -> Vec<f64> {
        let k = self.phi_grid as f64;
        (0..self.phi_grid).map(|i| (i as f64 + 0.5) / k).collect()
    }

    pub fn retained(&self) -> usize {
        let s = &self.schedule;
        (s.sweeps - s.burn_in).div_ceil(s.thin)
    }
}

/// Quadratic form `rᵀC⁻¹r` and `ln det C` for the AR(1) correlation
/// structure `C = R(φ) / (1 − φ²)` (so `Σ = v·C`), in O(n) via the Markov
/// factorization over calendar gaps.
pub(crate) fn ar1_quad_logdet(r: &[f64], times: &[i64], phi: f64) -> (f64, f64) {
    let s0 = 1.0 - phi * phi;
    let mut quad = r[0] * r[0] * s0;
    let mut logdet = -s0.ln();
    for k in 1..r.len() {
        let a = phi.powi(super::covariance::lag(times[k], times[k - 1]));
        let cond = (1.0 - a * a) / s0;
        let e = r[k] - a * r[k - 1];
        quad += e * e / cond;
        logdet += cond.ln();
    }
    (quad, logdet)
}

/// Precomputed AR(1) quantities for one `φ` and every calendar gap up to
/// `max_lag`, so that sweeps avoid repeated powers and logarithms.
#[derive(Debug, Clone)]
pub(crate) struct Ar1Table {
    pub(crate) phi: f64,
    pub(crate) s0: f64,
    ln_s0: f64,
    /// `φ^lag`, indexed by lag.
    pub(crate) a: Vec<f64>,
    /// `(1 − φ^{2·lag}) / (1 − φ²)`, the conditional variance factor.
    pub(crate) cond: Vec<f64>,
    inv_cond: Vec<f64>,
    ln_cond: Vec<f64>,
}

impl Ar1Table {
    pub(crate) fn new(phi: f64, max_lag: usize) -> Self {
        let s0 = 1.0 - phi * phi;
        let a: Vec<f64> = (0..=max_lag).map(|l| phi.powi(l as i32)).collect();
        let cond: Vec<f64> = a.iter().map(|x| (1.0 - x * x) / s0).collect();
        Ar1Table {
            phi,
            s0,
            ln_s0: s0.ln(),
            inv_cond: cond.iter().map(|c| 1.0 / c).collect(),
            ln_cond: cond.iter().map(|c| c.ln()).collect(),
            a,
            cond,
        }
    }

    /// Same result as [`ar1_quad_logdet`]; `lags[k]` is the gap between
    /// observations `k` and `k−1` (`lags[0]` unused).
    pub(crate) fn quad_logdet(&self, r: &[f64], lags: &[usize]) -> (f64, f64) {
        let mut quad = r[0] * r[0] * self.s0;
        let mut logdet = -self.ln_s0;
        for k in 1..r.len() {
            let l = lags[k];
            let e = r[k] - self.a[l] * r[k - 1];
            quad += e * e * self.inv_cond[l];
            logdet += self.ln_cond[l];
        }
        (quad, logdet)
    }

    /// Adds `v·C(φ)` to the square matrix `m` in place.
    pub(crate) fn add_covariance(&self, m: &mut nalgebra::DMatrix<f64>, lags: &[usize], v: f64) {
        let n = lags.len();
        let scale = v / self.s0;
        for j in 0..n {
            m[(j, j)] += scale;
            let mut c = scale;
            for k in j + 1..n {
                c *= self.a[lags[k]];
                m[(j, k)] += c;
                m[(k, j)] += c;
            }
        }
    }
}

/// Gaps between consecutive times; the first entry is 0.
pub(crate) fn consecutive_lags(times: &[i64]) -> Vec<usize> {
    core::iter::once(0)
        .chain(times.windows(2).map(|w| super::covariance::lag(w[1], w[0]) as usize))
        .collect()
}

/// `log N(r | 0, Σ_θ)` for the AR(1) covariance.
pub(crate) fn ar1_log_density(r: &[f64], times: &[i64], noise: NoiseParams) -> f64 {
    let n = r.len() as f64;
    let (q, ld) = ar1_quad_logdet(r, times, noise.phi);
    -0.5 * n * (2.0 * PI).ln() - 0.5 * n * noise.v.ln() - 0.5 * ld - 0.5 * q / noise.v
}

/// Inverse-gamma conditional `(shape, scale)` of `v` given residuals `r`
/// and `φ`.
pub fn v_conditional(r: &[f64], times: &[i64], phi: f64, shape: f64, scale: f64) -> (f64, f64) {
    let (q, _) = ar1_quad_logdet(r, times, phi);
    (shape + 0.5 * r.len() as f64, scale + 0.5 * q)
}

/// Log marginal likelihood of a trajectory under the null (`γ = 0`,
/// `f ≡ 0`) or the Gaussian-process alternative (`γ = 1`, `f`
/// integrated out).
pub fn log_marginal(traj: &Trajectory, gamma: bool, noise: NoiseParams, cfg: &TrajTestConfig) -> Result<f64> {
    noise.validate()?;
    if !gamma {
        return Ok(ar1_log_density(traj.values(), traj.times(), noise));
    }
    let k = sqexp_covariance(traj.times(), cfg.gp_amplitude, cfg.gp_length_scale);
    let s = ar1_covariance(traj.times(), noise.phi, noise.v)?;
    gaussian_log_density(traj.values(), &(k + s))
}

pub(crate) fn gaussian_log_density(z: &[f64], cov: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_with_jitter(cov)?;
    Ok(gaussian_log_density_chol(z, &chol))
}

pub(crate) fn gaussian_log_density_chol(z: &[f64], chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let zv = DVector::from_column_slice(z);
    let w = chol.l_dirty().solve_lower_triangular(&zv).expect("nonsingular factor");
    let n = z.len() as f64;
    -0.5 * n * (2.0 * PI).ln() - 0.5 * ln_det(chol) - 0.5 * w.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn traj(times: Vec<i64>, values: Vec<f64>) -> Trajectory {
        Trajectory::new("s", times, values).unwrap()
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let times = vec![1, 2, 4, 5, 9];
        let r = vec![0.3, -0.2, 0.8, 0.1, -0.5];
        let lags = consecutive_lags(&times);
        assert_eq!(lags, vec![0, 1, 2, 1, 4]);
        for phi in [0.0, 0.35, 0.9] {
            let t = Ar1Table::new(phi, 4);
            let (q1, l1) = t.quad_logdet(&r, &lags);
            let (q2, l2) = ar1_quad_logdet(&r, &times, phi);
            assert!((q1 - q2).abs() < 1e-12 && (l1 - l2).abs() < 1e-12);
            let mut m = nalgebra::DMatrix::zeros(5, 5);
            t.add_covariance(&mut m, &lags, 0.7);
            let d = ar1_covariance(&times, phi, 0.7).unwrap();
            assert!((m - d).abs().max() < 1e-12);
        }
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new("a", vec![], vec![]).is_err());
        assert!(Trajectory::new("a", vec![2, 1], vec![0.0, 0.0]).is_err());
        assert!(Trajectory::new("a", vec![1, 1], vec![0.0, 0.0]).is_err());
        assert!(Trajectory::new("a", vec![1, 5], vec![0.0, 0.0]).is_ok());
    }

    #[test]
    fn univariate_null_marginal() {
        let t = traj(vec![3], vec![0.7]);
        let lm = log_marginal(&t, false, NoiseParams { phi: 0.0, v: 1.3 }, &TrajTestConfig::default()).unwrap();
        let expected = -0.5 * (2.0 * PI * 1.3).ln() - 0.5 * 0.49 / 1.3;
        assert!((lm - expected).abs() < 1e-14);
    }

    #[test]
    fn sequential_density_matches_dense() {
        let t = traj(vec![1, 2, 4, 7, 8], vec![0.3, -0.2, 0.9, 1.1, -0.4]);
        for phi in [0.0, 0.3, 0.85] {
            let noise = NoiseParams { phi, v: 0.6 };
            let dense = gaussian_log_density(t.values(), &ar1_covariance(t.times(), phi, 0.6).unwrap()).unwrap();
            let seq = log_marginal(&t, false, noise, &TrajTestConfig::default()).unwrap();
            assert!((dense - seq).abs() < 1e-10, "phi={phi}: {dense} vs {seq}");
        }
    }

    #[test]
    fn vanishing_slab_collapses_to_spike() {
        let t = traj(vec![1, 2, 3, 5], vec![0.1, 0.4, -0.3, 0.2]);
        let noise = NoiseParams { phi: 0.4, v: 0.8 };
        let cfg = TrajTestConfig { gp_amplitude: 1e-14, ..Default::default() };
        let m0 = log_marginal(&t, false, noise, &cfg).unwrap();
        let m1 = log_marginal(&t, true, noise, &cfg).unwrap();
        assert!((m0 - m1).abs() < 1e-9);
    }

    #[test]
    fn conjugate_v_update_with_white_noise() {
        let z = [0.5, -1.0, 2.0];
        let (shape, scale) = v_conditional(&z, &[1, 2, 3], 0.0, 2.5, 2.5);
        assert_eq!(shape, 4.0);
        assert!((scale - (2.5 + 0.5 * 5.25)).abs() < 1e-15);
    }

    #[test]
    fn phi_grid_endpoints() {
        let g = TrajTestConfig::default().phi_grid_points();
        assert_eq!(g.len(), 100);
        assert!((g[0] - 0.005).abs() < 1e-15);
        assert!((g[99] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = TrajTestConfig::default();
        assert!(c.validate().is_ok());
        c.gp_length_scale = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
