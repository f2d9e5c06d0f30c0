use alloc::format;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;

/// Diagonal increments tried, in order, when a factorization fails.
pub const JITTER_SCHEDULE: [f64; 3] = [0.0, 1e-8, 1e-6];

/// AR(1) covariance over calendar times:
/// `Σ_jk = v / (1 − φ²) · φ^|t_j − t_k|`.
pub fn ar1_covariance(times: &[i64], phi: f64, v: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&phi) {
        return Err(Error::Domain(format!("AR(1) coefficient must lie in [0,1), got {phi}")));
    }
    if !(v > 0.0) {
        return Err(Error::Domain(format!("innovation variance must be positive, got {v}")));
    }
    let scale = v / (1.0 - phi * phi);
    let n = times.len();
    Ok(DMatrix::from_fn(n, n, |j, k| scale * phi.powi(lag(times[j], times[k]))))
}

/// Squared-exponential kernel `K_jk = τ² exp(−(t_j − t_k)² / 2ℓ²)`.
pub fn sqexp_covariance(times: &[i64], amplitude: f64, length_scale: f64) -> DMatrix<f64> {
    cross_sqexp(times, times, amplitude, length_scale)
}

pub(crate) fn cross_sqexp(a: &[i64], b: &[i64], amplitude: f64, length_scale: f64) -> DMatrix<f64> {
    let denom = 2.0 * length_scale * length_scale;
    DMatrix::from_fn(a.len(), b.len(), |j, k| {
        let d = (a[j] - b[k]) as f64;
        amplitude * (-d * d / denom).exp()
    })
}

#[inline]
pub(crate) fn lag(a: i64, b: i64) -> i32 {
    (a - b).unsigned_abs().min(i32::MAX as u64) as i32
}

/// Lower Cholesky factor of `m`, retrying with the jitter schedule.
pub fn cholesky_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cholesky_with_jitter(m).map(|c| c.unpack())
}

/// Cholesky factor, adding the jitter schedule to the diagonal on failure.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    for &jitter in &JITTER_SCHEDULE {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok(c);
        }
    }
    Err(Error::Numerical(format!(
        "covariance of size {} not positive definite after jitter {:e}",
        m.nrows(),
        JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1]
    )))
}

pub(crate) fn ln_det(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_examples() {
        let s = ar1_covariance(&[1, 2, 3], 0.0, 0.7).unwrap();
        assert_eq!(s, DMatrix::from_diagonal_element(3, 3, 0.7));
        let s = ar1_covariance(&[1, 2], 0.5, 0.75).unwrap();
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(0, 1)], 0.5);
        let s = ar1_covariance(&[1, 3], 0.5, 0.75).unwrap();
        assert_eq!(s[(1, 0)], 0.25);
        assert!(matches!(ar1_covariance(&[1], 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn sqexp_matches_formula() {
        let t = [0, 1, 4];
        let k = sqexp_covariance(&t, 0.25, 5.0);
        for j in 0..3 {
            assert_eq!(k[(j, j)], 0.25);
            for i in 0..3 {
                let d = (t[i] - t[j]) as f64;
                assert!((k[(i, j)] - 0.25 * libm::exp(-d * d / 50.0)).abs() < 1e-16);
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        let far = sqexp_covariance(&[0, 10_000], 1.0, 5.0);
        assert_eq!(far[(0, 1)], 0.0);
    }

    #[test]
    fn jitter_rescues_dense_sqexp() {
        let t: alloc::vec::Vec<i64> = (0..40).collect();
        let k = sqexp_covariance(&t, 0.25, 5.0);
        assert!(cholesky_with_jitter(&k).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_with_jitter(&bad), Err(Error::Numerical(_))));
    }
}
