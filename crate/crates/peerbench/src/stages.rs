//! Pipeline stages as plain functions over in-memory tables.

use peerbench_core::copula::NormalScores;
use peerbench_core::panel::build_covariates;
use peerbench_core::seed::splitmix64;
use peerbench_core::trajtest::{run_trajectory_test, TrajTestConfig, Trajectory, TrajectoryRun};
use peerbench_core::treebench::{
    run_tree_sampler, BenchmarkTable, McmcSchedule, TrainingData, TreePriorConfig, TreeSamplerState,
};

use crate::error::{CliError, Result};
use crate::formats::{DrawsFile, ScoresTable};
use crate::panel_io::LoadedPanel;

/// Builds covariates (group labels → KS distances) and normal scores.
pub fn transform(panel: &LoadedPanel) -> Result<ScoresTable> {
    if panel.dataset.is_empty() {
        return Err(CliError::data("panel has no complete rows"));
    }
    let built = build_covariates(&panel.dataset, &panel.spec)?;
    let z = NormalScores::fit(&built.scores())?.scores;
    ScoresTable::new(&built, z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub prior: TreePriorConfig,
    pub schedule: McmcSchedule,
    pub chains: usize,
    pub level: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { prior: TreePriorConfig::default(), schedule: McmcSchedule::default(), chains: 1, level: 0.95 }
    }
}

/// Seed of chain `k`; chain 0 uses the run seed itself.
pub fn chain_seed(seed: u64, k: usize) -> u64 {
    if k == 0 {
        seed
    } else {
        splitmix64(seed ^ splitmix64(k as u64))
    }
}

pub fn training_data(scores: &ScoresTable) -> Result<TrainingData> {
    Ok(TrainingData::new(scores.x.clone(), scores.z.clone(), scores.covariate_names.len())?)
}

/// Runs `chains` independent chains on scoped threads and pools them.
pub fn fit_tree(scores: &ScoresTable, p: &TreeParams) -> Result<(BenchmarkTable, DrawsFile)> {
    if p.chains == 0 {
        return Err(CliError::usage("chains must be at least 1"));
    }
    if !(p.level > 0.0 && p.level < 1.0) {
        return Err(CliError::usage(format!("level must lie in (0,1), got {}", p.level)));
    }
    p.prior.validate()?;
    p.schedule.validate()?;
    let data = training_data(scores)?;
    let chains: Vec<TreeSamplerState> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..p.chains)
            .map(|k| {
                let data = &data;
                let schedule = McmcSchedule { seed: chain_seed(p.schedule.seed, k), ..p.schedule };
                s.spawn(move || run_tree_sampler(data, &p.prior, &schedule))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect::<std::result::Result<Vec<_>, _>>()
    })?;
    for (k, c) in chains.iter().enumerate() {
        log::info!("chain {k}: acceptance {:.3}, final tree {} leaves", c.acceptance_rate(), c.tree.n_leaves());
    }
    let table = BenchmarkTable::build(&data, &chains, p.level)?;
    Ok((table, DrawsFile::from_chains(scores.covariate_names.clone(), &chains)))
}

/// Predictive intervals at a new level from stored draws.
pub fn intervals(scores: &ScoresTable, draws: DrawsFile, level: f64) -> Result<BenchmarkTable> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::usage(format!("level must lie in (0,1), got {level}")));
    }
    draws.check(scores.len(), &scores.covariate_names)?;
    let data = training_data(scores)?;
    Ok(BenchmarkTable::build(&data, &[draws.into_state()], level)?)
}

/// Groups benchmark scores into per-subject trajectories.
pub fn trajectories_from_benchmark(scores: &ScoresTable, table: &BenchmarkTable) -> Result<Vec<Trajectory>> {
    let mut by: std::collections::BTreeMap<&str, Vec<(i64, f64)>> = Default::default();
    for (i, r) in table.rows.iter().enumerate() {
        by.entry(scores.subjects[i].as_str()).or_default().push((scores.times[i], r.benchmark));
    }
    by.into_iter()
        .map(|(s, mut pts)| {
            pts.sort_by_key(|p| p.0);
            let (t, v) = pts.into_iter().unzip();
            Ok(Trajectory::new(s, t, v)?)
        })
        .collect()
}

pub fn test_trajectories(trajs: &[Trajectory], cfg: &TrajTestConfig) -> Result<TrajectoryRun> {
    let run = run_trajectory_test(trajs, cfg)?;
    log::info!(
        "trajectory test: {} subjects, posterior mean w {:.4} (prior {:.4})",
        run.results.len(),
        run.weight_mean,
        run.weight_prior_mean
    );
    Ok(run)
}
