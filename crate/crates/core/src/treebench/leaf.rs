//! Conjugate normal–inverse-gamma leaf model.
//!
//! `σ² ~ IG(a₀, b₀)`, `μ | σ² ~ N(m₀, σ²/κ₀)`, `z | μ, σ² ~ N(μ, σ²)`.

use alloc::format;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;
use crate::math::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LeafParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPrior {
    pub m0: f64,
    pub kappa0: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for LeafPrior {
    /// Centered on the standard-normal marginal: prior mean 0, `E[σ²] = 1`.
    fn default() -> Self {
        LeafPrior { m0: 0.0, kappa0: 0.1, a0: 3.0, b0: 2.0 }
    }
}

/// Count, mean and centered sum of squares of the scores in one leaf.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LeafStats {
    pub n: usize,
    pub mean: f64,
    pub ss: f64,
}

impl LeafStats {
    pub fn from_scores(scores: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = scores.clone().fold((0usize, 0.0), |(n, s), z| (n + 1, s + z));
        if n == 0 {
            return LeafStats::default();
        }
        let mean = sum / n as f64;
        let ss = scores.map(|z| (z - mean) * (z - mean)).sum();
        LeafStats { n, mean, ss }
    }
}

/// Posterior hyperparameters `(m_n, κ_n, a_n, b_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPosterior {
    pub m: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
}

impl LeafPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m0.is_finite() && self.kappa0 > 0.0 && self.a0 > 1.0 && self.b0 > 0.0;
        if ok && self.kappa0.is_finite() && self.a0.is_finite() && self.b0.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "leaf prior needs finite m0, kappa0 > 0, a0 > 1, b0 > 0; got {self:?}"
            )))
        }
    }

    pub fn posterior(&self, s: &LeafStats) -> LeafPosterior {
        let n = s.n as f64;
        let kappa = self.kappa0 + n;
        let m = (self.kappa0 * self.m0 + n * s.mean) / kappa;
        let a = self.a0 + 0.5 * n;
        let d = s.mean - self.m0;
        let b = self.b0 + 0.5 * s.ss + 0.5 * self.kappa0 * n * d * d / kappa;
        LeafPosterior { m, kappa, a, b }
    }

    /// Log marginal likelihood of the leaf's scores; 0 for an empty leaf.
    pub fn log_marginal(&self, s: &LeafStats) -> f64 {
        if s.n == 0 {
            return 0.0;
        }
        let post = self.posterior(s);
        -0.5 * s.n as f64 * LN_2PI + 0.5 * (self.kappa0 / post.kappa).ln() + self.a0 * self.b0.ln()
            - post.a * post.b.ln()
            + ln_gamma(post.a)
            - ln_gamma(self.a0)
    }

    /// Draws `(μ, σ)` from the conditional posterior of a leaf.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, s: &LeafStats, rng: &mut R) -> LeafParams {
        let post = self.posterior(s);
        let precision: f64 = Gamma::new(post.a, 1.0 / post.b).expect("valid gamma").sample(rng);
        let var = 1.0 / precision;
        let eps: f64 = StandardNormal.sample(rng);
        LeafParams { mu: post.m + eps * (var / post.kappa).sqrt(), sigma: var.sqrt() }
    }
}

/// Log marginal likelihood `log ∫∫ Π N(z_i | μ, σ²) dNIG(μ, σ²)`.
pub fn leaf_log_marginal(scores: &[f64], prior: &LeafPrior) -> f64 {
    prior.log_marginal(&LeafStats::from_scores(scores.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent route: Gauss–Legendre-free 2-D midpoint/trapezoid
    /// quadrature over (μ, log σ²) of likelihood × prior density.
    fn quadrature_log_marginal(z: &[f64], p: &LeafPrior) -> f64 {
        let ln_ig = |s2: f64| p.a0 * p.b0.ln() - ln_gamma(p.a0) - (p.a0 + 1.0) * s2.ln() - p.b0 / s2;
        let ln_norm = |x: f64, m: f64, v: f64| -0.5 * (LN_2PI + v.ln()) - 0.5 * (x - m) * (x - m) / v;
        let (nu, nt) = (1200usize, 1200usize);
        let (t_lo, t_hi) = (-9.0f64, 7.0f64);
        let ht = (t_hi - t_lo) / nt as f64;
        let mut terms = Vec::with_capacity(nu * nt);
        for it in 0..=nt {
            let t = t_lo + ht * it as f64;
            let s2 = t.exp();
            // μ integrated over ±12 prior sd around the pooled center
            let center = {
                let n = z.len() as f64;
                (p.kappa0 * p.m0 + z.iter().sum::<f64>()) / (p.kappa0 + n)
            };
            let half = 12.0 * (s2 / p.kappa0).sqrt().max(1e-3);
            let hu = 2.0 * half / nu as f64;
            let wt = if it == 0 || it == nt { 0.5 } else { 1.0 };
            for iu in 0..=nu {
                let mu = center - half + hu * iu as f64;
                let wu = if iu == 0 || iu == nu { 0.5 } else { 1.0 };
                let lik: f64 = z.iter().map(|&x| ln_norm(x, mu, s2)).sum();
                // Jacobian of σ² = e^t is σ²
                let v = lik + ln_norm(mu, p.m0, s2 / p.kappa0) + ln_ig(s2) + t + (wt * wu * ht * hu).ln();
                terms.push(v);
            }
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn empty_leaf_is_zero() {
        assert_eq!(leaf_log_marginal(&[], &LeafPrior::default()), 0.0);
    }

    #[test]
    fn matches_quadrature_on_two_points() {
        let prior = LeafPrior { m0: 0.0, kappa0: 0.1, a0: 3.0, b0: 2.0 };
        let z = [0.3, -0.1];
        let exact = leaf_log_marginal(&z, &prior);
        let quad = quadrature_log_marginal(&z, &prior);
        assert!((exact - quad).abs() < 1e-6, "exact {exact} quad {quad}");
    }

    #[test]
    fn factorizes_across_disjoint_leaves() {
        let prior = LeafPrior::default();
        let a = [0.1, 0.5, -0.2];
        let b = [1.1, 0.9];
        let joint = leaf_log_marginal(&a, &prior) + leaf_log_marginal(&b, &prior);
        let sum_again: f64 = [&a[..], &b[..]].iter().map(|s| leaf_log_marginal(s, &prior)).sum();
        assert_eq!(joint, sum_again);
    }

    #[test]
    fn posterior_draw_moments() {
        let prior = LeafPrior::default();
        let z: Vec<f64> = (0..200).map(|i| 2.0 + 0.01 * (i as f64 - 100.0)).collect();
        let stats = LeafStats::from_scores(z.iter().copied());
        let post = prior.posterior(&stats);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 20_000;
        let mut mean_var = 0.0;
        let mut mean_mu = 0.0;
        for _ in 0..draws {
            let p = prior.sample_posterior(&stats, &mut rng);
            mean_var += p.sigma * p.sigma;
            mean_mu += p.mu;
        }
        mean_var /= draws as f64;
        mean_mu /= draws as f64;
        let expected_var = post.b / (post.a - 1.0);
        assert!((mean_var - expected_var).abs() < 0.02 * expected_var);
        assert!((mean_mu - post.m).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let bad = LeafPrior { a0: 1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
