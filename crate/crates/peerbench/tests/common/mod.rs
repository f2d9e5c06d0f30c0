//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use peerbench_core::trajtest::{log_marginal, NoiseParams, TrajTestConfig, Trajectory};
use peerbench_core::treebench::LeafPrior;
use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_inv_gamma(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

fn ln_normal(x: f64, m: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - m) * (x - m) / var
}

/// Trapezoid weights for `n` nodes spaced `h` apart.
fn trap(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i + 1 == n {
        0.5 * h
    } else {
        h
    }
}

/// Leaf marginal likelihood by brute-force 2-D trapezoid quadrature over
/// `(μ, log σ²)` of likelihood × normal–inverse-gamma prior density.
pub fn leaf_marginal_quadrature(z: &[f64], p: &LeafPrior) -> f64 {
    let n = z.len() as f64;
    let center = (p.kappa0 * p.m0 + z.iter().sum::<f64>()) / (p.kappa0 + n);
    let (nt, nu) = (1601usize, 401usize);
    let (t_lo, t_hi) = (-12.0f64, 9.0f64);
    let ht = (t_hi - t_lo) / (nt - 1) as f64;
    let mut outer = Vec::with_capacity(nt);
    for it in 0..nt {
        let t = t_lo + ht * it as f64;
        let s2 = t.exp();
        // window of ±14 conditional sds around the pooled mean
        let half = 14.0 * (s2 / (p.kappa0 + n)).sqrt();
        let hu = 2.0 * half / (nu - 1) as f64;
        let inner: Vec<f64> = (0..nu)
            .map(|iu| {
                let mu = center - half + hu * iu as f64;
                let lik: f64 = z.iter().map(|&x| ln_normal(x, mu, s2)).sum();
                lik + ln_normal(mu, p.m0, s2 / p.kappa0) + trap(iu, nu, hu).ln()
            })
            .collect();
        // σ² = e^t contributes the Jacobian e^t
        outer.push(logsumexp(&inner) + ln_inv_gamma(s2, p.a0, p.b0) + t + trap(it, nt, ht).ln());
    }
    logsumexp(&outer)
}

/// Posterior probability of the non-null model for one subject at fixed
/// mixture weight `w`, integrating `v` by quadrature in `log v` and `φ`
/// over the discrete grid.
pub fn inclusion_oracle(t: &Trajectory, cfg: &TrajTestConfig, w: f64) -> f64 {
    let grid = cfg.phi_grid_points();
    let nv = 600;
    let (lo, hi) = (1e-3f64.ln(), 1e3f64.ln());
    let h = (hi - lo) / (nv - 1) as f64;
    let mut m = [Vec::new(), Vec::new()];
    for &phi in &grid {
        for (g, slot) in m.iter_mut().enumerate() {
            let terms: Vec<f64> = (0..nv)
                .map(|k| {
                    let u = lo + h * k as f64;
                    let v = u.exp();
                    log_marginal(t, g == 1, NoiseParams { phi, v }, cfg).unwrap()
                        + ln_inv_gamma(v, cfg.ig_shape, cfg.ig_scale)
                        + u
                        + trap(k, nv, h).ln()
                })
                .collect();
            slot.push(logsumexp(&terms));
        }
    }
    let (m0, m1) = (logsumexp(&m[0]), logsumexp(&m[1]));
    let log_odds = (w / (1.0 - w)).ln() + m1 - m0;
    1.0 / (1.0 + (-log_odds).exp())
}

/// Area under the ROC curve (ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut hits, mut pairs) = (0.0, 0.0);
    for (a, &la) in scores.iter().zip(labels) {
        if !la {
            continue;
        }
        for (b, &lb) in scores.iter().zip(labels) {
            if lb {
                continue;
            }
            pairs += 1.0;
            hits += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    hits / pairs
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Chi-square test of homogeneity between two count vectors over the
/// same categories; sparse categories are pooled into their neighbour
/// until every expected count is at least 5. Returns `(statistic, df,
/// p-value)`.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = na + nb;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc.0 += *x as f64;
        acc.1 += *y as f64;
        let col = acc.0 + acc.1;
        if col * na.min(nb) / total >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let mut stat = 0.0;
    for (x, y) in &cells {
        let col = x + y;
        for (obs, n) in [(x, na), (y, nb)] {
            let e = col * n / total;
            stat += (obs - e) * (obs - e) / e;
        }
    }
    let df = cells.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, p)
}
