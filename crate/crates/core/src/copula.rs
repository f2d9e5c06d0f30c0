//! Empirical-CDF normal scores.
//!
//! Raw scores `r` map to latent scores `ẑ = Φ⁻¹(N/(N+1) · F̂(r))`, where `F̂`
//! is the right-continuous empirical CDF of the fitting sample. Tied raw
//! values share the maximal rank and therefore one latent score.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{normal_cdf, probit};

/// Right-continuous empirical CDF, frozen after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
    cumulative: Vec<usize>,
    n: usize,
}

impl EmpiricalCdf {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("cannot fit an ECDF to an empty sample".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("ECDF sample contains non-finite values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut uniq: Vec<f64> = Vec::new();
        let mut cumulative = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if uniq.last() == Some(&v) {
                *cumulative.last_mut().unwrap() = i + 1;
            } else {
                uniq.push(v);
                cumulative.push(i + 1);
            }
        }
        Ok(EmpiricalCdf { values: uniq, cumulative, n: sorted.len() })
    }

    /// Number of fitted points, `N`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Distinct fitted values, ascending.
    pub fn support(&self) -> &[f64] {
        &self.values
    }

    /// `#{x_i ≤ v} / N`.
    pub fn eval(&self, v: f64) -> f64 {
        self.count_le(v) as f64 / self.n as f64
    }

    fn count_le(&self, v: f64) -> usize {
        let idx = self.values.partition_point(|&x| x <= v);
        if idx == 0 {
            0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Latent normal score of one raw value.
    ///
    /// Values below the fitted minimum (out-of-sample) have `F̂ = 0`; they are
    /// placed half a rank below the smallest fitted value so the score stays
    /// finite.
    pub fn normal_score(&self, v: f64) -> f64 {
        let n = self.n as f64;
        let count = self.count_le(v);
        let p = if count == 0 { 0.5 / (n + 1.0) } else { count as f64 / (n + 1.0) };
        probit(p)
    }
}

/// Latent scores together with the ECDF that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalScores {
    pub scores: Vec<f64>,
    pub ecdf: EmpiricalCdf,
}

impl NormalScores {
    /// Fits the ECDF on `values` and transforms the same values.
    pub fn fit(values: &[f64]) -> Result<Self> {
        let ecdf = EmpiricalCdf::fit(values)?;
        let scores = to_normal_scores(values, &ecdf);
        Ok(NormalScores { scores, ecdf })
    }
}

pub fn fit_ecdf(values: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::fit(values)
}

pub fn to_normal_scores(data: &[f64], ecdf: &EmpiricalCdf) -> Vec<f64> {
    data.iter().map(|&v| ecdf.normal_score(v)).collect()
}

/// Maps a benchmark score onto the common (0,1) scale, `Φ(y)`.
pub fn common_scale(y: f64) -> f64 {
    normal_cdf(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_mass() {
        let f = fit_ecdf(&[5.0]).unwrap();
        assert_eq!(f.eval(5.0), 1.0);
        assert_eq!(f.eval(4.9), 0.0);
        assert_eq!(to_normal_scores(&[5.0], &f), vec![0.0]);
    }

    #[test]
    fn counting_definition() {
        let f = fit_ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert!((f.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.eval(3.0), 1.0);
        assert!(matches!(fit_ecdf(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn three_point_scores() {
        let s = NormalScores::fit(&[10.0, 20.0, 30.0]).unwrap().scores;
        // Φ⁻¹(0.25), Φ⁻¹(0.5), Φ⁻¹(0.75) from the standard normal quantile table.
        let q = 0.674_489_750_196_081_7;
        assert!((s[0] + q).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - q).abs() < 1e-12);
    }

    #[test]
    fn ties_share_a_score() {
        let s = NormalScores::fit(&[1.0, 2.0, 2.0, 3.0]).unwrap().scores;
        assert_eq!(s[1], s[2]);
        assert!((s[2] - probit(3.0 / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn maximum_maps_to_rescaled_top() {
        let vals: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let s = NormalScores::fit(&vals).unwrap().scores;
        assert_eq!(s[49], probit(50.0 / 51.0));
        assert!(s.iter().all(|z| z.is_finite()));
    }

    #[test]
    fn out_of_sample_below_minimum_is_finite() {
        let f = fit_ecdf(&[1.0, 2.0]).unwrap();
        assert!(f.normal_score(-100.0).is_finite());
        assert!(f.normal_score(-100.0) < f.normal_score(1.0));
    }

    #[test]
    fn dkw_band_on_uniforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let f = fit_ecdf(&xs).unwrap();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        // sup over jump points, both sides of each step
        let mut sup: f64 = 0.0;
        for (i, &x) in sorted.iter().enumerate() {
            sup = sup.max((f.eval(x) - x).abs()).max((i as f64 / n as f64 - x).abs());
        }
        // DKW: P(sup > ε) ≤ 2 exp(−2nε²); ε at 99% is sqrt(ln(2/0.01) / 2n).
        let eps = libm::sqrt(libm::log(2.0 / 0.01) / (2.0 * n as f64));
        assert!(sup < eps, "sup {sup} vs band {eps}");
    }

    #[test]
    fn common_scale_examples() {
        assert_eq!(common_scale(0.0), 0.5);
        assert!((common_scale(1.959_964) - 0.975).abs() < 1e-6);
        for y in [-2.0, -0.3, 0.7, 3.1] {
            assert!((common_scale(-y) - (1.0 - common_scale(y))).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn monotone_and_transform_invariant(vals in prop::collection::vec(-50.0f64..50.0, 1..60)) {
            let s = NormalScores::fit(&vals).unwrap().scores;
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if vals[i] < vals[j] { prop_assert!(s[i] < s[j]); }
                    if vals[i] == vals[j] { prop_assert_eq!(s[i], s[j]); }
                }
            }
            let mapped: Vec<f64> = vals.iter().map(|v| v * 3.0 + 7.0).collect();
            let sm = NormalScores::fit(&mapped).unwrap().scores;
            prop_assert_eq!(s, sm);
        }
    }
}
