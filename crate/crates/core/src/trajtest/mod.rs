//! Simultaneous Bayesian testing of benchmarked trajectories.
//!
//! Each subject's trajectory is `z = f + ε` with AR(1) noise
//! `ε ~ N(0, Σ_θ)`, `θ = (φ, v)`. The mean `f` is either the zero function
//! (`γ = 0`) or a draw from a squared-exponential Gaussian process
//! (`γ = 1`), with prior probability `w` of the latter. Learning `w` from all
//! subjects at once is what adjusts the inclusion probabilities for
//! multiplicity.
//!
//! The benchmarked scores produced by the tree stage are the trajectory
//! values here.

mod covariance;
mod model;
mod predictive;
mod sampler;

pub use covariance::{ar1_covariance, cholesky_factor, sqexp_covariance, JITTER_SCHEDULE};
pub use model::{log_marginal, v_conditional, NoiseParams, TrajSchedule, TrajTestConfig, Trajectory};
pub use predictive::{Band, PredictiveBands, DEFAULT_LEVELS};
pub use sampler::{
    posterior_predictive, run_trajectory_test, HistoryStatus, SubjectState, TrajSampler, TrajectoryResult,
    TrajectoryRun,
};

/// Equal-width histogram of inclusion probabilities on [0,1]:
/// `(lower, upper, count)` per bin; 1.0 falls in the last bin. Pass only
/// reported probabilities.
pub fn inclusion_histogram(probabilities: &[f64], bins: usize) -> alloc::vec::Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let mut counts = alloc::vec![0usize; bins];
    for p in probabilities {
        let idx = ((p.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 / bins as f64, (i + 1) as f64 / bins as f64, c))
        .collect()
}

impl TrajectoryRun {
    /// Reported (sufficient-history) inclusion probabilities.
    pub fn reported_probabilities(&self) -> alloc::vec::Vec<f64> {
        self.results.iter().filter_map(|r| r.inclusion_probability).collect()
    }
}
