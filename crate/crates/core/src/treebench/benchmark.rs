use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::prior::TrainingData;
use super::sampler::{BenchmarkAccumulator, TreeSamplerState};
use crate::copula::common_scale;
use crate::error::{Error, Result};
use crate::math::mixture_quantile;

/// Conditional predictive `(mean, lower, upper)` for covariates `x`: the
/// equal-weight mixture over retained draws of `N(μ_leaf(x), σ²_leaf(x))`,
/// with central quantiles at `(1 ± level)/2`.
pub fn predictive_interval(state: &TreeSamplerState, x: &[f64], level: f64) -> Result<(f64, f64, f64)> {
    interval_over(state.draws.iter(), x, level)
}

fn interval_over<'a>(
    draws: impl Iterator<Item = &'a super::sampler::RetainedDraw>,
    x: &[f64],
    level: f64,
) -> Result<(f64, f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("interval level must lie in (0,1), got {level}")));
    }
    let comps = draws
        .map(|d| d.leaf_params(x).map(|p| (p.mu, p.sigma)))
        .collect::<Result<Vec<_>>>()?;
    if comps.is_empty() {
        return Err(Error::State("no retained draws; run the sampler past burn-in first".into()));
    }
    let mean = comps.iter().map(|c| c.0).sum::<f64>() / comps.len() as f64;
    let lower = mixture_quantile(&comps, 0.5 * (1.0 - level));
    let upper = mixture_quantile(&comps, 0.5 * (1.0 + level));
    Ok((mean, lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkRow {
    /// Posterior-mean benchmark score `y_i`.
    pub benchmark: f64,
    /// `Φ(y_i)`.
    pub common_scale: f64,
    pub pred_mean: f64,
    pub pred_lower: f64,
    pub pred_upper: f64,
}

/// Per-observation benchmark scores and predictive intervals, pooled over
/// one or more chains.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub level: f64,
    pub draws: usize,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    /// Pools chains: benchmark means are draw-weighted; intervals use the
    /// union of retained draws. Observations that visit the same leaf in
    /// every draw share one mixture and are evaluated once.
    pub fn build(data: &TrainingData, chains: &[TreeSamplerState], level: f64) -> Result<Self> {
        let mut acc = BenchmarkAccumulator::new(data.len());
        for c in chains {
            if c.accumulator.sums.len() != data.len() {
                return Err(Error::Domain("chain was run on a different dataset".into()));
            }
            acc.merge(&c.accumulator);
        }
        if acc.draws == 0 {
            return Err(Error::State("no retained draws; run the sampler past burn-in first".into()));
        }
        let means = acc.means();

        let mut sig = vec![(0xcbf2_9ce4_8422_2325u64, 0u64); data.len()];
        for draw in chains.iter().flat_map(|c| c.draws.iter()) {
            for (i, s) in sig.iter_mut().enumerate() {
                let leaf = draw.tree.route_unchecked(data.row(i)) as u64 + 1;
                s.0 = (s.0 ^ leaf).wrapping_mul(0x0000_0100_0000_01b3);
                s.1 = s.1.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(leaf);
            }
        }
        let mut groups: BTreeMap<(u64, u64), (f64, f64, f64)> = BTreeMap::new();
        let mut rows = Vec::with_capacity(data.len());
        for (i, s) in sig.iter().enumerate() {
            let (pm, lo, hi) = match groups.get(s) {
                Some(v) => *v,
                None => {
                    let v = interval_over(chains.iter().flat_map(|c| c.draws.iter()), data.row(i), level)?;
                    groups.insert(*s, v);
                    v
                }
            };
            rows.push(BenchmarkRow {
                benchmark: means[i],
                common_scale: common_scale(means[i]),
                pred_mean: pm,
                pred_lower: lo,
                pred_upper: hi,
            });
        }
        Ok(BenchmarkTable { level, draws: acc.draws, rows })
    }
}
