use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Binary splitting rule: `x[covariate] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitRule {
    pub covariate: usize,
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.covariate] <= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NodeKind {
    Leaf,
    Internal { rule: SplitRule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TreeNode {
    pub depth: usize,
    pub parent: Option<usize>,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

/// Arena-backed regression tree; node 0 is the root. Leaf ids are node
/// indices.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tree {
    nodes: Vec<TreeNode>,
    arity: usize,
}

impl Tree {
    pub fn root_only(arity: usize) -> Self {
        Tree { nodes: vec![TreeNode { depth: 0, parent: None, kind: NodeKind::Leaf }], arity }
    }

    /// Structural consistency check for trees built outside the sampler
    /// (e.g. deserialized): child links, parents, depths and covariate
    /// indices.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(format!("malformed tree: {m}")));
        if self.nodes.is_empty() || self.nodes[0].parent.is_some() || self.nodes[0].depth != 0 {
            return bad("root");
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[0] = true;
        for (i, n) in self.nodes.iter().enumerate() {
            if let NodeKind::Internal { rule, left, right } = n.kind {
                if rule.covariate >= self.arity || !rule.threshold.is_finite() {
                    return bad("rule");
                }
                for c in [left, right] {
                    if c >= self.nodes.len() || c == 0 || seen[c] {
                        return bad("child index");
                    }
                    seen[c] = true;
                    let child = &self.nodes[c];
                    if child.parent != Some(i) || child.depth != n.depth + 1 {
                        return bad("parent link");
                    }
                }
            }
        }
        if seen.iter().all(|s| *s) {
            Ok(())
        } else {
            bad("unreachable node")
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf())
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    /// Depth of the deepest leaf.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn rule(&self, id: usize) -> Option<SplitRule> {
        match self.nodes[id].kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            NodeKind::Leaf => None,
        }
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes[id].kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            NodeKind::Leaf => None,
        }
    }

    /// Internal nodes whose children are both leaves (prunable).
    pub fn prunable_nodes(&self) -> Vec<usize> {
        self.internal_nodes()
            .filter(|&i| {
                let (l, r) = self.children(i).unwrap();
                self.nodes[l].is_leaf() && self.nodes[r].is_leaf()
            })
            .collect()
    }

    /// (parent, child) pairs of internal nodes, candidates for a rule swap.
    pub fn swap_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in self.internal_nodes() {
            let (l, r) = self.children(i).unwrap();
            for c in [l, r] {
                if !self.nodes[c].is_leaf() {
                    out.push((i, c));
                }
            }
        }
        out
    }

    /// Leaf reached by cascading `x` down the tree.
    pub fn route(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.arity {
            return Err(Error::Domain(format!(
                "covariate vector has length {}, tree expects {}",
                x.len(),
                self.arity
            )));
        }
        Ok(self.route_unchecked(x))
    }

    #[inline]
    pub(crate) fn route_unchecked(&self, x: &[f64]) -> usize {
        self.route_from(0, x)
    }

    #[inline]
    pub(crate) fn route_from(&self, start: usize, x: &[f64]) -> usize {
        let mut id = start;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Leaf => return id,
                NodeKind::Internal { rule, left, right } => {
                    id = if rule.goes_left(x) { *left } else { *right };
                }
            }
        }
    }

    /// Splits `leaf` with `rule`; the new children are appended.
    pub fn grow(&self, leaf: usize, rule: SplitRule) -> Tree {
        debug_assert!(self.nodes[leaf].is_leaf());
        let mut t = self.clone();
        let depth = t.nodes[leaf].depth + 1;
        let left = t.nodes.len();
        let right = left + 1;
        for _ in 0..2 {
            t.nodes.push(TreeNode { depth, parent: Some(leaf), kind: NodeKind::Leaf });
        }
        t.nodes[leaf].kind = NodeKind::Internal { rule, left, right };
        t
    }

    /// Collapses `node` (whose children are leaves) into a leaf.
    ///
    /// Returns the compacted tree and the old-to-new index map.
    pub fn prune(&self, node: usize) -> (Tree, Vec<Option<usize>>) {
        let mut t = self.clone();
        t.nodes[node].kind = NodeKind::Leaf;
        t.compact()
    }

    pub fn with_rule(&self, node: usize, rule: SplitRule) -> Tree {
        let mut t = self.clone();
        if let NodeKind::Internal { rule: r, .. } = &mut t.nodes[node].kind {
            *r = rule;
        }
        t
    }

    pub fn with_swapped_rules(&self, parent: usize, child: usize) -> Tree {
        let (rp, rc) = (self.rule(parent).unwrap(), self.rule(child).unwrap());
        self.with_rule(parent, rc).with_rule(child, rp)
    }

    /// Drops unreachable nodes, renumbering in depth-first order.
    fn compact(&self) -> (Tree, Vec<Option<usize>>) {
        let mut map = vec![None; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            map[id] = Some(order.len());
            order.push(id);
            if let Some((l, r)) = self.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                let kind = match n.kind {
                    NodeKind::Leaf => NodeKind::Leaf,
                    NodeKind::Internal { rule, left, right } => NodeKind::Internal {
                        rule,
                        left: map[left].unwrap(),
                        right: map[right].unwrap(),
                    },
                };
                TreeNode { depth: n.depth, parent: n.parent.map(|p| map[p].unwrap()), kind }
            })
            .collect();
        (Tree { nodes, arity: self.arity }, map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(c: usize, t: f64) -> SplitRule {
        SplitRule { covariate: c, threshold: t }
    }

    #[test]
    fn root_only_routes_everything_to_root() {
        let t = Tree::root_only(2);
        assert_eq!(t.route(&[1.0, -4.0]).unwrap(), 0);
        assert!(matches!(t.route(&[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn rule_application_and_ties_go_left() {
        let t = Tree::root_only(2).grow(0, split(1, 3.0));
        let (l, r) = t.children(0).unwrap();
        assert_eq!(t.route(&[0.0, 2.0]).unwrap(), l);
        assert_eq!(t.route(&[0.0, 3.0]).unwrap(), l);
        assert_eq!(t.route(&[0.0, 3.5]).unwrap(), r);
    }

    #[test]
    fn prune_restores_structure() {
        let t0 = Tree::root_only(1).grow(0, split(0, 1.0));
        let (l, _) = t0.children(0).unwrap();
        let t1 = t0.grow(l, split(0, 0.0));
        assert_eq!(t1.n_leaves(), 3);
        assert_eq!(t1.prunable_nodes(), vec![l]);
        assert_eq!(t1.swap_pairs(), vec![(0, l)]);
        let (t2, map) = t1.prune(l);
        assert_eq!(t2, t0);
        assert_eq!(map[0], Some(0));
        assert_eq!(map[3], None);
    }

    #[test]
    fn swap_exchanges_rules() {
        let t = Tree::root_only(2).grow(0, split(0, 1.0));
        let (l, _) = t.children(0).unwrap();
        let t = t.grow(l, split(1, 5.0));
        let s = t.with_swapped_rules(0, l);
        assert_eq!(s.rule(0), Some(split(1, 5.0)));
        assert_eq!(s.rule(l), Some(split(0, 1.0)));
    }
}
