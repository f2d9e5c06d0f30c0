//! Tree prior: depth-dependent split probabilities and the splitting-rule
//! prior, together with the training data it is defined on.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::leaf::LeafPrior;
use super::tree::{SplitRule, Tree};
use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;

/// Covariates (row-major) and latent scores used to fit a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    x: Vec<f64>,
    z: Vec<f64>,
    p: usize,
    sorted_columns: Vec<Vec<f64>>,
}

impl TrainingData {
    pub fn new(x: Vec<f64>, z: Vec<f64>, n_covariates: usize) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::Domain("training data is empty".into()));
        }
        if n_covariates == 0 || x.len() != z.len() * n_covariates {
            return Err(Error::Domain(format!(
                "covariate matrix has {} cells, expected {} rows × {n_covariates}",
                x.len(),
                z.len()
            )));
        }
        if x.iter().chain(&z).any(|v| !v.is_finite()) {
            return Err(Error::Domain("training data contains non-finite values".into()));
        }
        let sorted_columns = (0..n_covariates)
            .map(|j| {
                let mut col: Vec<f64> = (0..z.len()).map(|i| x[i * n_covariates + j]).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Ok(TrainingData { x, z, p: n_covariates, sorted_columns })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    pub fn scores(&self) -> &[f64] {
        &self.z
    }

    pub fn all_members(&self) -> Vec<u32> {
        (0..self.len() as u32).collect()
    }
}

/// Where split thresholds are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdSource {
    /// Covariate values observed at the node being split.
    #[default]
    Node,
    /// Covariate values observed anywhere in the training data.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreePriorConfig {
    pub alpha: f64,
    pub beta: f64,
    pub leaf: LeafPrior,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub thresholds: ThresholdSource,
}

impl Default for TreePriorConfig {
    fn default() -> Self {
        TreePriorConfig {
            alpha: 0.5,
            beta: 2.0,
            leaf: LeafPrior::default(),
            min_leaf: 10,
            max_depth: 25,
            thresholds: ThresholdSource::Node,
        }
    }
}

impl TreePriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("minimum leaf size must be at least 1".into()));
        }
        self.leaf.validate()
    }

    /// Split probability at `depth`, zero at or beyond the depth cap.
    pub fn split_prob_at(&self, depth: usize) -> f64 {
        if depth >= self.max_depth {
            0.0
        } else {
            split_probability(depth, self.alpha, self.beta)
        }
    }

    /// Whether a node holding `members` admits at least one legal rule.
    pub fn node_is_splittable(&self, data: &TrainingData, members: &[u32]) -> bool {
        RuleSpace::compute(data, members, self, &mut Vec::new()).is_growable()
    }
}

/// `α (1 + depth)^(−β)`.
pub fn split_probability(depth: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Legal thresholds `c` for one covariate satisfy `lo <= c < hi`.
#[derive(Debug, Clone, Copy)]
struct ThresholdRange {
    lo: f64,
    hi: f64,
    /// Number of candidate values (with multiplicity) in the range.
    count: usize,
}

/// The splitting-rule prior at one node: covariate uniform over those with a
/// legal threshold, threshold drawn from the empirical distribution of
/// candidate values restricted to splits leaving both children at least
/// `min_leaf` observations.
#[derive(Debug, Clone)]
pub(crate) struct RuleSpace {
    ranges: Vec<Option<ThresholdRange>>,
    available: usize,
}

impl RuleSpace {
    pub(crate) fn compute(
        data: &TrainingData,
        members: &[u32],
        cfg: &TreePriorConfig,
        scratch: &mut Vec<f64>,
    ) -> Self {
        let p = data.n_covariates();
        let m = members.len();
        let l = cfg.min_leaf;
        let mut ranges = Vec::with_capacity(p);
        let mut available = 0;
        for j in 0..p {
            if m < 2 * l {
                ranges.push(None);
                continue;
            }
            scratch.clear();
            scratch.extend(members.iter().map(|&i| data.value(i as usize, j)));
            let (_, lo, _) = scratch.select_nth_unstable_by(l - 1, f64::total_cmp);
            let lo = *lo;
            let (_, hi, _) = scratch.select_nth_unstable_by(m - l, f64::total_cmp);
            let hi = *hi;
            if lo >= hi {
                ranges.push(None);
                continue;
            }
            let count = match cfg.thresholds {
                ThresholdSource::Node => scratch.iter().filter(|&&v| v >= lo && v < hi).count(),
                ThresholdSource::Global => {
                    let col = &data.sorted_columns[j];
                    col.partition_point(|&v| v < hi) - col.partition_point(|&v| v < lo)
                }
            };
            available += 1;
            ranges.push(Some(ThresholdRange { lo, hi, count }));
        }
        RuleSpace { ranges, available }
    }

    pub(crate) fn is_growable(&self) -> bool {
        self.available > 0
    }

    /// Log prior probability of `rule` at this node; `-inf` if illegal.
    pub(crate) fn ln_prob(
        &self,
        rule: SplitRule,
        data: &TrainingData,
        members: &[u32],
        cfg: &TreePriorConfig,
    ) -> f64 {
        let Some(Some(range)) = self.ranges.get(rule.covariate) else {
            return f64::NEG_INFINITY;
        };
        let c = rule.threshold;
        if !(c >= range.lo && c < range.hi) {
            return f64::NEG_INFINITY;
        }
        let mult = match cfg.thresholds {
            ThresholdSource::Node => members
                .iter()
                .filter(|&&i| data.value(i as usize, rule.covariate) == c)
                .count(),
            ThresholdSource::Global => {
                let col = &data.sorted_columns[rule.covariate];
                col.partition_point(|&v| v <= c) - col.partition_point(|&v| v < c)
            }
        };
        if mult == 0 {
            return f64::NEG_INFINITY;
        }
        (mult as f64 / range.count as f64).ln() - (self.available as f64).ln()
    }

    pub(crate) fn sample<R: Rng + ?Sized>(
        &self,
        data: &TrainingData,
        members: &[u32],
        cfg: &TreePriorConfig,
        rng: &mut R,
    ) -> Option<SplitRule> {
        if self.available == 0 {
            return None;
        }
        let k = rng.random_range(0..self.available);
        let (covariate, range) = self
            .ranges
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.map(|r| (j, r)))
            .nth(k)?;
        let r = rng.random_range(0..range.count);
        let threshold = match cfg.thresholds {
            ThresholdSource::Node => members
                .iter()
                .map(|&i| data.value(i as usize, covariate))
                .filter(|&v| v >= range.lo && v < range.hi)
                .nth(r)?,
            ThresholdSource::Global => {
                let col = &data.sorted_columns[covariate];
                col[col.partition_point(|&v| v < range.lo) + r]
            }
        };
        Some(SplitRule { covariate, threshold })
    }
}

/// Splits `members` by `rule` into (left, right), preserving order.
pub(crate) fn partition(data: &TrainingData, members: &[u32], rule: SplitRule) -> (Vec<u32>, Vec<u32>) {
    members
        .iter()
        .partition(|&&i| data.value(i as usize, rule.covariate) <= rule.threshold)
}

/// Draws a tree from the generative prior on `data`.
///
/// Each node at depth `d` with a legal rule splits with probability
/// `α(1+d)^(−β)` (zero at the depth cap); rules come from the
/// splitting-rule prior on the node's observations.
pub fn sample_prior_tree<R: Rng + ?Sized>(cfg: &TreePriorConfig, data: &TrainingData, rng: &mut R) -> Tree {
    let mut tree = Tree::root_only(data.n_covariates());
    let mut scratch = Vec::new();
    let mut stack = alloc::vec![(0usize, data.all_members())];
    while let Some((id, members)) = stack.pop() {
        let depth = tree.node(id).depth;
        let space = RuleSpace::compute(data, &members, cfg, &mut scratch);
        if !space.is_growable() || !(rng.random::<f64>() < cfg.split_prob_at(depth)) {
            continue;
        }
        let rule = space.sample(data, &members, cfg, rng).expect("growable node has a rule");
        tree = tree.grow(id, rule);
        let (l, r) = tree.children(id).unwrap();
        let (lm, rm) = partition(data, &members, rule);
        stack.push((r, rm));
        stack.push((l, lm));
    }
    tree
}

/// Log prior density of `tree` on `data` (`-inf` if it contains an
/// illegal rule or exceeds the depth cap).
pub fn tree_log_prior(tree: &Tree, data: &TrainingData, cfg: &TreePriorConfig) -> f64 {
    let mut scratch = Vec::new();
    let mut total = 0.0;
    let mut stack = alloc::vec![(0usize, data.all_members())];
    while let Some((id, members)) = stack.pop() {
        let depth = tree.node(id).depth;
        let space = RuleSpace::compute(data, &members, cfg, &mut scratch);
        match tree.rule(id) {
            None => {
                let ps = if space.is_growable() { cfg.split_prob_at(depth) } else { 0.0 };
                total += (1.0 - ps).ln();
            }
            Some(rule) => {
                total += cfg.split_prob_at(depth).ln() + space.ln_prob(rule, data, &members, cfg);
                if total == f64::NEG_INFINITY {
                    return total;
                }
                let (l, r) = tree.children(id).unwrap();
                let (lm, rm) = partition(data, &members, rule);
                stack.push((l, lm));
                stack.push((r, rm));
            }
        }
    }
    total
}
