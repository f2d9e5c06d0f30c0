//! Scalar special functions: the standard normal CDF and quantile, log-gamma,
//! and quantiles of equally weighted Gaussian mixtures.

use core::f64::consts::{FRAC_1_SQRT_2, PI};


/// Elementary float functions routed through libm so the crate builds
/// without std. With std linked the inherent methods take precedence.
#[allow(dead_code)]
pub(crate) trait Real: Sized {
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn powi(self, e: i32) -> Self;
}

impl Real for f64 {
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    fn ln(self) -> f64 {
        libm::log(self)
    }
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    fn powf(self, e: f64) -> f64 {
        libm::pow(self, e)
    }
    fn powi(self, e: i32) -> f64 {
        // square-and-multiply; libm::pow is several times slower
        let mut base = if e < 0 { 1.0 / self } else { self };
        let mut n = e.unsigned_abs();
        let mut acc = 1.0;
        while n > 0 {
            if n & 1 == 1 {
                acc *= base;
            }
            base *= base;
            n >>= 1;
        }
        acc
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Log density of `N(mean, var)` at `x`.
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Standard normal quantile.
///
/// Wichura's AS241 (PPND16) rational approximation followed by one Newton
/// step on `Φ(x) = p`. Returns `-inf` / `+inf` at 0 / 1 and NaN outside [0, 1].
pub fn probit(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let x = as241(p);
    let pdf = normal_pdf(x);
    if pdf > 0.0 && pdf.is_finite() {
        x - (normal_cdf(x) - p) / pdf
    } else {
        x
    }
}

#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_854_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_049e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_879e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// CDF at `x` of the equal-weight mixture of `N(mean, sd²)` components.
pub fn mixture_cdf(components: &[(f64, f64)], x: f64) -> f64 {
    let total: f64 = components
        .iter()
        .map(|&(m, s)| normal_cdf((x - m) / s))
        .sum();
    total / components.len() as f64
}

fn mixture_pdf(components: &[(f64, f64)], x: f64) -> f64 {
    let total: f64 = components
        .iter()
        .map(|&(m, s)| normal_pdf((x - m) / s) / s)
        .sum();
    total / components.len() as f64
}

/// Quantile `q ∈ (0,1)` of an equal-weight Gaussian mixture.
///
/// Safeguarded Newton iteration inside a bracket that always contains the
/// root. Components must be nonempty with positive standard deviations.
pub fn mixture_quantile(components: &[(f64, f64)], q: f64) -> f64 {
    debug_assert!(!components.is_empty());
    if components.len() == 1 {
        let (m, s) = components[0];
        return m + s * probit(q);
    }
    let z = probit(q).abs() + 1.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut mean = 0.0;
    for &(m, s) in components {
        lo = lo.min(m - z * s);
        hi = hi.max(m + z * s);
        mean += m;
    }
    mean /= components.len() as f64;
    let mut x = mean.clamp(lo, hi);
    for _ in 0..200 {
        let f = mixture_cdf(components, x) - q;
        if f.abs() < 1e-14 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = mixture_pdf(components, x);
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-13 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probit_known_values() {
        assert_eq!(probit(0.5), 0.0);
        assert!((probit(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((probit(0.25) + 0.674_489_750_196_081_7).abs() < 1e-14);
        assert!((probit(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
        assert_eq!(probit(0.0), f64::NEG_INFINITY);
        assert!(probit(1.5).is_nan());
    }

    #[test]
    fn probit_matches_statrs() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((probit(p) - n.inverse_cdf(p)).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn cdf_symmetry() {
        for i in 0..100 {
            let x = -5.0 + 0.1 * i as f64;
            assert!((normal_cdf(-x) - (1.0 - normal_cdf(x))).abs() < 1e-15);
        }
        assert!((normal_cdf(1.959_964) - 0.975).abs() < 1e-7);
    }

    #[test]
    fn single_component_mixture_is_normal_quantile() {
        let q = mixture_quantile(&[(0.0, 1.0)], 0.975);
        assert!((q - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn mixture_quantile_inverts_cdf() {
        let comps = [(-1.0, 0.5), (2.0, 1.5), (0.3, 0.1)];
        for &q in &[0.025, 0.25, 0.5, 0.8, 0.975] {
            let x = mixture_quantile(&comps, q);
            assert!((mixture_cdf(&comps, x) - q).abs() < 1e-12);
        }
    }
}
