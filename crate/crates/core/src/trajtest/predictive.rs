use alloc::vec::Vec;

use crate::math::mixture_quantile;

/// Central credible levels reported for forecasts.
pub const DEFAULT_LEVELS: [f64; 3] = [0.50, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Forecast mean and central bands at future times.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveBands {
    pub times: Vec<i64>,
    pub mean: Vec<f64>,
    pub bands: Vec<Band>,
}

impl PredictiveBands {
    pub fn band(&self, level: f64) -> Option<&Band> {
        self.bands.iter().find(|b| (b.level - level).abs() < 1e-12)
    }
}

/// Bands of equal-weight Gaussian mixtures, one mixture per time point.
/// Components are `(mean, sd)`; zero-variance components are widened to
/// a tiny positive spread.
pub(crate) fn bands_from_components(times: Vec<i64>, comps: &[Vec<(f64, f64)>], levels: &[f64]) -> PredictiveBands {
    let comps: Vec<Vec<(f64, f64)>> = comps
        .iter()
        .map(|c| c.iter().map(|&(m, s)| (m, s.max(1e-12))).collect())
        .collect();
    let mean = comps
        .iter()
        .map(|c| if c.is_empty() { f64::NAN } else { c.iter().map(|x| x.0).sum::<f64>() / c.len() as f64 })
        .collect();
    let bands = levels
        .iter()
        .map(|&level| {
            let (lower, upper) = comps
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        (f64::NAN, f64::NAN)
                    } else {
                        (mixture_quantile(c, 0.5 * (1.0 - level)), mixture_quantile(c, 0.5 * (1.0 + level)))
                    }
                })
                .unzip();
            Band { level, lower, upper }
        })
        .collect();
    PredictiveBands { times, mean, bands }
}
