//! Bayesian regression tree with heteroskedastic normal leaves.
//!
//! Each leaf carries its own mean and standard deviation, so the tree models
//! both the conditional location and the conditional spread of the latent
//! scores. Benchmark scores are `(z − μ_leaf) / σ_leaf`, averaged over the
//! retained draws of the tree sampler.

mod benchmark;
mod leaf;
mod prior;
mod sampler;
mod tree;

pub use benchmark::{predictive_interval, BenchmarkRow, BenchmarkTable};
pub use leaf::{leaf_log_marginal, LeafParams, LeafPosterior, LeafPrior, LeafStats};
pub use prior::{sample_prior_tree, split_probability, tree_log_prior, ThresholdSource, TrainingData, TreePriorConfig};
pub use sampler::{
    run_tree_sampler, BenchmarkAccumulator, McmcSchedule, MoveKind, MoveWeights, Proposal, RetainedDraw,
    TreeSampler, TreeSamplerState,
};
pub use tree::{NodeKind, SplitRule, Tree, TreeNode};
