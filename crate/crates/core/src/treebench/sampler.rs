//! Metropolis–Hastings over trees.
//!
//! The target is `p(T) · Π_leaves m(z_leaf)` where `p(T)` is the generative
//! tree prior and `m` the closed-form leaf marginal. Four moves are mixed:
//! GROW, PRUNE, CHANGE and SWAP. When a move type has no legal target in the
//! current tree it is excluded and the remaining weights renormalized; the
//! renormalized weights enter the proposal ratio so detailed balance holds.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::leaf::{LeafParams, LeafStats};
use super::prior::{partition, RuleSpace, TrainingData, TreePriorConfig};
use super::tree::{SplitRule, Tree};
use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap];
}

/// Relative weights of the four move types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveWeights {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        MoveWeights { grow: 0.25, prune: 0.25, change: 0.40, swap: 0.10 }
    }
}

impl MoveWeights {
    fn weight(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change => self.change,
            MoveKind::Swap => self.swap,
        }
    }
}

/// Tree plus per-node caches: leaf members, growability, leaf log marginal,
/// the node's factor in the log prior, and (internal nodes) the log prior
/// probability of its rule.
#[derive(Debug, Clone)]
pub(crate) struct FittedTree {
    pub(crate) tree: Tree,
    members: Vec<Vec<u32>>,
    growable: Vec<bool>,
    log_ml: Vec<f64>,
    node_log_prior: Vec<f64>,
    rule_log_prob: Vec<f64>,
}

/// Target counts used by the proposal distribution.
#[derive(Debug, Clone, Copy)]
struct MoveCounts {
    growable: usize,
    prunable: usize,
    internal: usize,
    swappable: usize,
}

impl MoveCounts {
    fn of(kind: MoveKind, c: &MoveCounts) -> usize {
        match kind {
            MoveKind::Grow => c.growable,
            MoveKind::Prune => c.prunable,
            MoveKind::Change => c.internal,
            MoveKind::Swap => c.swappable,
        }
    }
}

struct Ctx<'a> {
    data: &'a TrainingData,
    cfg: &'a TreePriorConfig,
    likelihood: bool,
}

impl FittedTree {
    fn new(tree: Tree, ctx: &Ctx<'_>, scratch: &mut Vec<f64>) -> Self {
        let n = tree.len();
        let mut ft = FittedTree {
            tree,
            members: vec![Vec::new(); n],
            growable: vec![false; n],
            log_ml: vec![0.0; n],
            node_log_prior: vec![0.0; n],
            rule_log_prob: vec![0.0; n],
        };
        ft.rebuild(0, ctx.data.all_members(), ctx, scratch);
        ft
    }

    fn resize(&mut self) {
        let n = self.tree.len();
        self.members.resize(n, Vec::new());
        self.growable.resize(n, false);
        self.log_ml.resize(n, 0.0);
        self.node_log_prior.resize(n, 0.0);
        self.rule_log_prob.resize(n, 0.0);
    }

    /// Recomputes caches for the subtree rooted at `node`, which receives
    /// `members`.
    fn rebuild(&mut self, node: usize, members: Vec<u32>, ctx: &Ctx<'_>, scratch: &mut Vec<f64>) {
        let mut stack = vec![(node, members)];
        while let Some((id, m)) = stack.pop() {
            let depth = self.tree.node(id).depth;
            let space = RuleSpace::compute(ctx.data, &m, ctx.cfg, scratch);
            match self.tree.rule(id) {
                None => {
                    let g = space.is_growable();
                    let ps = if g { ctx.cfg.split_prob_at(depth) } else { 0.0 };
                    self.growable[id] = g && ps > 0.0;
                    self.node_log_prior[id] = (1.0 - ps).ln();
                    self.rule_log_prob[id] = 0.0;
                    self.log_ml[id] = if ctx.likelihood {
                        let z = ctx.data.scores();
                        ctx.cfg
                            .leaf
                            .log_marginal(&LeafStats::from_scores(m.iter().map(|&i| z[i as usize])))
                    } else {
                        0.0
                    };
                    self.members[id] = m;
                }
                Some(rule) => {
                    let lp = space.ln_prob(rule, ctx.data, &m, ctx.cfg);
                    self.rule_log_prob[id] = lp;
                    self.node_log_prior[id] = ctx.cfg.split_prob_at(depth).ln() + lp;
                    self.growable[id] = false;
                    self.log_ml[id] = 0.0;
                    let (l, r) = self.tree.children(id).unwrap();
                    let (lm, rm) = partition(ctx.data, &m, rule);
                    self.members[id] = Vec::new();
                    stack.push((r, rm));
                    stack.push((l, lm));
                }
            }
        }
    }

    fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some((l, r)) = self.tree.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// (log prior, log likelihood) contributions of the subtree at `node`.
    fn subtree_terms(&self, node: usize) -> (f64, f64) {
        self.subtree(node).into_iter().fold((0.0, 0.0), |(p, l), id| {
            (p + self.node_log_prior[id], l + self.log_ml[id])
        })
    }

    fn gather(&self, node: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for id in self.subtree(node) {
            out.extend_from_slice(&self.members[id]);
        }
        out
    }

    fn counts(&self) -> MoveCounts {
        let t = &self.tree;
        MoveCounts {
            growable: t.leaves().filter(|&i| self.growable[i]).count(),
            prunable: t.prunable_nodes().len(),
            internal: t.internal_nodes().count(),
            swappable: t.swap_pairs().len(),
        }
    }

    pub(crate) fn log_prior(&self) -> f64 {
        self.node_log_prior.iter().sum()
    }

    pub(crate) fn log_likelihood(&self) -> f64 {
        self.log_ml.iter().sum()
    }

    pub(crate) fn leaf_members(&self, leaf: usize) -> &[u32] {
        &self.members[leaf]
    }
}

/// Log of the renormalized probability of picking `kind` given the
/// available targets.
fn ln_move_prob(w: &MoveWeights, c: &MoveCounts, kind: MoveKind) -> f64 {
    let total: f64 = MoveKind::ALL
        .iter()
        .filter(|&&k| MoveCounts::of(k, c) > 0)
        .map(|&k| w.weight(k))
        .sum();
    if MoveCounts::of(kind, c) == 0 || total <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (w.weight(kind) / total).ln()
}

/// A proposed tree with the three terms of its log acceptance ratio.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    /// Node the move acts on, indexed in the current tree.
    pub target: usize,
    pub log_proposal_ratio: f64,
    pub log_prior_ratio: f64,
    pub log_likelihood_ratio: f64,
    next: FittedTree,
}

impl Proposal {
    pub fn log_acceptance(&self) -> f64 {
        let v = self.log_proposal_ratio + self.log_prior_ratio + self.log_likelihood_ratio;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    pub fn tree(&self) -> &Tree {
        &self.next.tree
    }
}

/// One Metropolis–Hastings chain over trees.
#[derive(Debug, Clone)]
pub struct TreeSampler<'a> {
    data: &'a TrainingData,
    cfg: TreePriorConfig,
    weights: MoveWeights,
    likelihood: bool,
    current: FittedTree,
    scratch: Vec<f64>,
}

impl<'a> TreeSampler<'a> {
    pub fn new(data: &'a TrainingData, cfg: TreePriorConfig) -> Result<Self> {
        Self::with_tree(data, cfg, Tree::root_only(data.n_covariates()))
    }

    pub fn with_tree(data: &'a TrainingData, cfg: TreePriorConfig, tree: Tree) -> Result<Self> {
        cfg.validate()?;
        if tree.arity() != data.n_covariates() {
            return Err(Error::Domain("tree arity does not match training data".into()));
        }
        let mut scratch = Vec::new();
        let current = {
            let ctx = Ctx { data, cfg: &cfg, likelihood: true };
            FittedTree::new(tree, &ctx, &mut scratch)
        };
        Ok(TreeSampler { data, cfg, weights: MoveWeights::default(), likelihood: true, current, scratch })
    }

    /// Switches the likelihood term on or off; with it off the chain targets
    /// the tree prior alone.
    pub fn set_likelihood(&mut self, on: bool) {
        if on != self.likelihood {
            self.likelihood = on;
            let tree = self.current.tree.clone();
            let ctx = Ctx { data: self.data, cfg: &self.cfg, likelihood: on };
            self.current = FittedTree::new(tree, &ctx, &mut self.scratch);
        }
    }

    pub fn set_move_weights(&mut self, weights: MoveWeights) {
        self.weights = weights;
    }

    pub fn tree(&self) -> &Tree {
        &self.current.tree
    }

    pub fn config(&self) -> &TreePriorConfig {
        &self.cfg
    }

    pub fn data(&self) -> &TrainingData {
        self.data
    }

    pub(crate) fn fitted(&self) -> &FittedTree {
        &self.current
    }

    /// Log prior plus log marginal likelihood of the current tree.
    pub fn log_posterior(&self) -> f64 {
        self.current.log_prior() + self.current.log_likelihood()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.current.log_likelihood()
    }

    /// Leaf id of every observation in the current tree.
    pub fn allocation(&self) -> Vec<usize> {
        let mut out = vec![0; self.data.len()];
        for leaf in self.current.tree.leaves() {
            for &i in self.current.leaf_members(leaf) {
                out[i as usize] = leaf;
            }
        }
        out
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx { data: self.data, cfg: &self.cfg, likelihood: self.likelihood }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        kind: MoveKind,
        target: usize,
        next: FittedTree,
        old_root: usize,
        new_root: usize,
        ln_fwd: f64,
        ln_rev: f64,
    ) -> Proposal {
        let (p_old, l_old) = self.current.subtree_terms(old_root);
        let (p_new, l_new) = next.subtree_terms(new_root);
        Proposal {
            kind,
            target,
            log_proposal_ratio: ln_rev - ln_fwd,
            log_prior_ratio: p_new - p_old,
            log_likelihood_ratio: if p_new == f64::NEG_INFINITY { 0.0 } else { l_new - l_old },
            next,
        }
    }

    /// GROW `leaf` with `rule`. `None` if the leaf cannot grow or the rule is
    /// illegal there.
    pub fn propose_grow(&mut self, leaf: usize, rule: SplitRule) -> Option<Proposal> {
        if !self.current.tree.node(leaf).is_leaf() || !self.current.growable[leaf] {
            return None;
        }
        let before = self.current.counts();
        let mut next = self.current.clone();
        next.tree = next.tree.grow(leaf, rule);
        next.resize();
        let members = core::mem::take(&mut next.members[leaf]);
        let mut scratch = core::mem::take(&mut self.scratch);
        next.rebuild(leaf, members, &self.ctx(), &mut scratch);
        self.scratch = scratch;
        let rule_lp = next.rule_log_prob[leaf];
        if rule_lp == f64::NEG_INFINITY {
            return None;
        }
        let after = next.counts();
        let w = &self.weights;
        let ln_fwd = ln_move_prob(w, &before, MoveKind::Grow) - (before.growable as f64).ln() + rule_lp;
        let ln_rev = ln_move_prob(w, &after, MoveKind::Prune) - (after.prunable as f64).ln();
        Some(self.finish(MoveKind::Grow, leaf, next, leaf, leaf, ln_fwd, ln_rev))
    }

    /// PRUNE `node`, whose two children must be leaves.
    pub fn propose_prune(&mut self, node: usize) -> Option<Proposal> {
        let (l, r) = self.current.tree.children(node)?;
        let t = &self.current.tree;
        if !t.node(l).is_leaf() || !t.node(r).is_leaf() {
            return None;
        }
        let before = self.current.counts();
        let members = self.current.gather(node);
        let rule_lp = self.current.rule_log_prob[node];
        let (tree, map) = self.current.tree.prune(node);
        let mut next = FittedTree {
            tree,
            members: Vec::new(),
            growable: Vec::new(),
            log_ml: Vec::new(),
            node_log_prior: Vec::new(),
            rule_log_prob: Vec::new(),
        };
        next.resize();
        for (old, new) in map.iter().enumerate() {
            if let Some(new) = *new {
                next.members[new] = self.current.members[old].clone();
                next.growable[new] = self.current.growable[old];
                next.log_ml[new] = self.current.log_ml[old];
                next.node_log_prior[new] = self.current.node_log_prior[old];
                next.rule_log_prob[new] = self.current.rule_log_prob[old];
            }
        }
        let new_node = map[node].unwrap();
        let mut scratch = core::mem::take(&mut self.scratch);
        next.rebuild(new_node, members, &self.ctx(), &mut scratch);
        self.scratch = scratch;
        let after = next.counts();
        let w = &self.weights;
        let ln_fwd = ln_move_prob(w, &before, MoveKind::Prune) - (before.prunable as f64).ln();
        let ln_rev = if next.growable[new_node] {
            ln_move_prob(w, &after, MoveKind::Grow) - (after.growable as f64).ln() + rule_lp
        } else {
            f64::NEG_INFINITY
        };
        Some(self.finish(MoveKind::Prune, node, next, node, new_node, ln_fwd, ln_rev))
    }

    /// CHANGE the rule of internal `node` to `rule`. `None` if `rule` is not
    /// a legal rule at the node.
    pub fn propose_change(&mut self, node: usize, rule: SplitRule) -> Option<Proposal> {
        let old_lp = self.current.rule_log_prob[node];
        self.current.tree.rule(node)?;
        let before = self.current.counts();
        let members = self.current.gather(node);
        let mut next = self.current.clone();
        next.tree = next.tree.with_rule(node, rule);
        let mut scratch = core::mem::take(&mut self.scratch);
        next.rebuild(node, members, &self.ctx(), &mut scratch);
        self.scratch = scratch;
        let new_lp = next.rule_log_prob[node];
        if new_lp == f64::NEG_INFINITY {
            return None;
        }
        let after = next.counts();
        let w = &self.weights;
        let n_int = before.internal as f64;
        let ln_fwd = ln_move_prob(w, &before, MoveKind::Change) - n_int.ln() + new_lp;
        let ln_rev = ln_move_prob(w, &after, MoveKind::Change) - n_int.ln() + old_lp;
        Some(self.finish(MoveKind::Change, node, next, node, node, ln_fwd, ln_rev))
    }

    /// SWAP the rules of internal `parent` and its internal child `child`.
    pub fn propose_swap(&mut self, parent: usize, child: usize) -> Option<Proposal> {
        let (l, r) = self.current.tree.children(parent)?;
        if (child != l && child != r) || self.current.tree.rule(child).is_none() {
            return None;
        }
        let before = self.current.counts();
        let members = self.current.gather(parent);
        let mut next = self.current.clone();
        next.tree = next.tree.with_swapped_rules(parent, child);
        let mut scratch = core::mem::take(&mut self.scratch);
        next.rebuild(parent, members, &self.ctx(), &mut scratch);
        self.scratch = scratch;
        let after = next.counts();
        let w = &self.weights;
        let ln_fwd = ln_move_prob(w, &before, MoveKind::Swap) - (before.swappable as f64).ln();
        let ln_rev = ln_move_prob(w, &after, MoveKind::Swap) - (after.swappable as f64).ln();
        Some(self.finish(MoveKind::Swap, parent, next, parent, parent, ln_fwd, ln_rev))
    }

    /// Draws a random move. `None` when the tree admits no move at all.
    pub fn propose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Proposal> {
        let counts = self.current.counts();
        let avail: Vec<MoveKind> =
            MoveKind::ALL.iter().copied().filter(|&k| MoveCounts::of(k, &counts) > 0).collect();
        let total: f64 = avail.iter().map(|&k| self.weights.weight(k)).sum();
        if avail.is_empty() || total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut kind = *avail.last().unwrap();
        for &k in &avail {
            let wk = self.weights.weight(k);
            if u < wk {
                kind = k;
                break;
            }
            u -= wk;
        }
        let t = &self.current.tree;
        match kind {
            MoveKind::Grow => {
                let leaves: Vec<usize> = t.leaves().filter(|&i| self.current.growable[i]).collect();
                let leaf = leaves[rng.random_range(0..leaves.len())];
                let members = &self.current.members[leaf];
                let space = RuleSpace::compute(self.data, members, &self.cfg, &mut self.scratch);
                let rule = space.sample(self.data, members, &self.cfg, rng)?;
                self.propose_grow(leaf, rule)
            }
            MoveKind::Prune => {
                let nodes = t.prunable_nodes();
                let node = nodes[rng.random_range(0..nodes.len())];
                self.propose_prune(node)
            }
            MoveKind::Change => {
                let nodes: Vec<usize> = t.internal_nodes().collect();
                let node = nodes[rng.random_range(0..nodes.len())];
                let members = self.current.gather(node);
                let space = RuleSpace::compute(self.data, &members, &self.cfg, &mut self.scratch);
                let rule = space.sample(self.data, &members, &self.cfg, rng)?;
                self.propose_change(node, rule)
            }
            MoveKind::Swap => {
                let pairs = t.swap_pairs();
                let (p, c) = pairs[rng.random_range(0..pairs.len())];
                self.propose_swap(p, c)
            }
        }
    }

    pub fn accept(&mut self, proposal: Proposal) {
        self.current = proposal.next;
    }

    /// One MH transition; returns whether the proposal was accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let Some(p) = self.propose(rng) else {
            return false;
        };
        let la = p.log_acceptance();
        if la >= 0.0 || rng.random::<f64>().ln() < la {
            self.accept(p);
            true
        } else {
            false
        }
    }

    /// Draws `(μ, σ)` for every leaf from the conditional posterior.
    pub fn sample_leaf_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Option<LeafParams>> {
        let z = self.data.scores();
        let mut out = vec![None; self.current.tree.len()];
        for leaf in self.current.tree.leaves() {
            let m = &self.current.members[leaf];
            let stats = LeafStats::from_scores(m.iter().map(|&i| z[i as usize]));
            out[leaf] = Some(self.cfg.leaf.sample_posterior(&stats, rng));
        }
        out
    }
}

/// Iterations, burn-in, thinning and seed of a tree-sampler run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcSchedule {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub likelihood: bool,
}

impl Default for McmcSchedule {
    fn default() -> Self {
        McmcSchedule { iterations: 20_000, burn_in: 5_000, thin: 5, seed: 1, likelihood: true }
    }
}

impl McmcSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(alloc::format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations,
                self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Tree and leaf parameters at one retained iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetainedDraw {
    pub tree: Tree,
    /// Indexed by node id; `Some` exactly at leaves.
    pub params: Vec<Option<LeafParams>>,
}

impl RetainedDraw {
    pub fn leaf_params(&self, x: &[f64]) -> Result<LeafParams> {
        let leaf = self.tree.route(x)?;
        Ok(self.params[leaf].expect("leaf carries parameters"))
    }
}

/// Running sums of per-observation benchmark scores.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkAccumulator {
    pub sums: Vec<f64>,
    pub draws: usize,
}

impl BenchmarkAccumulator {
    pub fn new(n: usize) -> Self {
        BenchmarkAccumulator { sums: vec![0.0; n], draws: 0 }
    }

    pub fn means(&self) -> Vec<f64> {
        let d = self.draws.max(1) as f64;
        self.sums.iter().map(|s| s / d).collect()
    }

    /// Pools two accumulators; means combine weighted by draw counts.
    pub fn merge(&mut self, other: &BenchmarkAccumulator) {
        debug_assert_eq!(self.sums.len(), other.sums.len());
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.draws += other.draws;
    }
}

/// Output of [`run_tree_sampler`].
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSamplerState {
    pub tree: Tree,
    /// Final leaf allocation of every observation.
    pub allocation: Vec<usize>,
    pub iteration: usize,
    pub accepted: usize,
    pub accumulator: BenchmarkAccumulator,
    pub draws: Vec<RetainedDraw>,
}

impl TreeSamplerState {
    /// Posterior-mean benchmark score of every observation.
    pub fn benchmark_scores(&self) -> Vec<f64> {
        self.accumulator.means()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.iteration.max(1) as f64
    }
}

/// Runs one chain. After burn-in, every `thin`-th iteration draws the leaf
/// parameters and accumulates `y_i = (z_i − μ_leaf) / σ_leaf`.
pub fn run_tree_sampler(
    data: &TrainingData,
    cfg: &TreePriorConfig,
    schedule: &McmcSchedule,
) -> Result<TreeSamplerState> {
    schedule.validate()?;
    let mut sampler = TreeSampler::new(data, cfg.clone())?;
    sampler.set_likelihood(schedule.likelihood);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let z = data.scores();
    let mut acc = BenchmarkAccumulator::new(data.len());
    let mut draws = Vec::with_capacity(schedule.retained());
    let mut accepted = 0;
    for it in 0..schedule.iterations {
        if sampler.step(&mut rng) {
            accepted += 1;
        }
        if it >= schedule.burn_in && (it - schedule.burn_in).is_multiple_of(schedule.thin) {
            let params = sampler.sample_leaf_params(&mut rng);
            let fitted = sampler.fitted();
            for leaf in fitted.tree.leaves() {
                let p = params[leaf].unwrap();
                for &i in fitted.leaf_members(leaf) {
                    acc.sums[i as usize] += (z[i as usize] - p.mu) / p.sigma;
                }
            }
            acc.draws += 1;
            draws.push(RetainedDraw { tree: fitted.tree.clone(), params });
        }
    }
    Ok(TreeSamplerState {
        tree: sampler.tree().clone(),
        allocation: sampler.allocation(),
        iteration: schedule.iterations,
        accepted,
        accumulator: acc,
        draws,
    })
}
