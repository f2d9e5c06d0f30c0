//! Synthetic panels and trajectory cohorts with known ground truth.
//!
//! Raw panel scores are `skew(z*)` with
//! `skew(z) = 0.04·z` for `z ≥ 0` and `0.04·(1 − e^{−z})` for `z < 0`:
//! continuous, strictly increasing, with an exponentially long lower tail.
//! The copula transform removes it, so the exact form does not matter.
//!
//! Every subject draws from its own keyed random stream; generation is
//! deterministic in the config and independent of subject count ordering.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;
use crate::panel::{CovariateValue, Observation, PanelDataset};
use crate::seed::keyed_rng;
use crate::trajtest::Trajectory;

/// Covariate names emitted by [`generate_panel`], in column order.
pub const PANEL_COVARIATES: [&str; 4] = ["year", "size", "leverage", "country"];

/// The fixed heavy-left-tail skewing map applied to latent scores.
pub fn skew(z: f64) -> f64 {
    if z >= 0.0 {
        0.04 * z
    } else {
        0.04 * (1.0 - (-z).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPanelConfig {
    pub subjects: usize,
    pub periods: usize,
    pub start_year: i64,
    /// 1, 2 or 4 cells. Two cells split on `size < 0`; four cells are the
    /// quadrants of (`size`, `leverage`) in the order
    /// (−,−), (+,−), (−,+), (+,+).
    pub cells: Vec<CellSpec>,
    /// Number of countries, labelled `C0`, `C1`, …; `C0` is the baseline.
    pub groups: usize,
    /// Shift of the latent mean for the last country, linear in between.
    pub group_shift: f64,
    /// Per-year standard deviation of `size` and `leverage` around the
    /// subject's level.
    pub covariate_jitter: f64,
    /// Probability that a score is missing (completely at random).
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthPanelConfig {
    fn default() -> Self {
        SynthPanelConfig {
            subjects: 500,
            periods: 20,
            start_year: 1990,
            cells: four_cells(),
            groups: 3,
            group_shift: 0.0,
            covariate_jitter: 0.1,
            missing_rate: 0.0,
            seed: 1,
        }
    }
}

/// A four-cell heteroskedastic design: σ* alternates between 0.5 and 1.5
/// across quadrants, with means that differ by cell.
pub fn four_cells() -> Vec<CellSpec> {
    vec![
        CellSpec { mu: -0.6, sigma: 0.5 },
        CellSpec { mu: 0.4, sigma: 1.5 },
        CellSpec { mu: 0.6, sigma: 0.5 },
        CellSpec { mu: -0.4, sigma: 1.5 },
    ]
}

impl SynthPanelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.periods == 0 {
            return Err(Error::Config("subjects and periods must be positive".into()));
        }
        if ![1, 2, 4].contains(&self.cells.len()) {
            return Err(Error::Config(format!("cell count must be 1, 2 or 4, got {}", self.cells.len())));
        }
        if self.cells.iter().any(|c| !(c.sigma > 0.0) || !c.mu.is_finite() || !c.sigma.is_finite()) {
            return Err(Error::Config("cell sigma must be positive and finite".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("at least one group required".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing rate must lie in [0,1)".into()));
        }
        if !(self.covariate_jitter >= 0.0) || !self.group_shift.is_finite() {
            return Err(Error::Config("covariate jitter must be nonnegative".into()));
        }
        Ok(())
    }

    fn cell_of(&self, size: f64, leverage: f64) -> usize {
        match self.cells.len() {
            1 => 0,
            2 => (size >= 0.0) as usize,
            _ => (size >= 0.0) as usize + 2 * (leverage >= 0.0) as usize,
        }
    }
}

/// Ground truth for one generated observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTruth {
    pub subject: String,
    pub time: i64,
    pub cell: usize,
    pub mu: f64,
    pub sigma: f64,
    pub latent: f64,
    /// `(latent − mu) / sigma`.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SynthPanel {
    pub dataset: PanelDataset,
    /// One entry per observation in `dataset`, same order.
    pub truth: Vec<PanelTruth>,
    /// Rows whose score was blanked, with their covariates.
    pub missing: Vec<Observation>,
}

fn subject_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = format!("{}", n.saturating_sub(1)).len().max(3);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Generates a panel with covariates `year`, `size`, `leverage`, `country`.
pub fn generate_panel(cfg: &SynthPanelConfig) -> Result<SynthPanel> {
    cfg.validate()?;
    let mut obs = Vec::with_capacity(cfg.subjects * cfg.periods);
    let mut truth = Vec::with_capacity(cfg.subjects * cfg.periods);
    let mut missing = Vec::new();
    let jitter = Normal::new(0.0, cfg.covariate_jitter).map_err(|e| Error::Config(format!("{e}")))?;
    for id in subject_ids("F", cfg.subjects) {
        let mut rng = keyed_rng(cfg.seed, &id);
        let group = rng.random_range(0..cfg.groups);
        let size0: f64 = rng.random_range(-1.0..1.0);
        let lev0: f64 = rng.random_range(-1.0..1.0);
        let shift = if cfg.groups > 1 { cfg.group_shift * group as f64 / (cfg.groups - 1) as f64 } else { 0.0 };
        for p in 0..cfg.periods {
            let time = cfg.start_year + p as i64;
            let size = size0 + jitter.sample(&mut rng);
            let leverage = lev0 + jitter.sample(&mut rng);
            let cell = cfg.cell_of(size, leverage);
            let spec = cfg.cells[cell];
            let mu = spec.mu + shift;
            let e: f64 = rng.sample(StandardNormal);
            let latent = mu + spec.sigma * e;
            let is_missing = cfg.missing_rate > 0.0 && rng.random::<f64>() < cfg.missing_rate;
            let o = Observation {
                subject: id.clone(),
                time,
                raw_score: if is_missing { f64::NAN } else { skew(latent) },
                covariates: vec![
                    CovariateValue::Number(time as f64),
                    CovariateValue::Number(size),
                    CovariateValue::Number(leverage),
                    CovariateValue::Label(format!("C{group}")),
                ],
            };
            if is_missing {
                missing.push(o);
                continue;
            }
            obs.push(o);
            truth.push(PanelTruth {
                subject: id.clone(),
                time,
                cell,
                mu,
                sigma: spec.sigma,
                latent,
                residual: e,
            });
        }
    }
    let names = PANEL_COVARIATES.iter().map(|s| String::from(*s)).collect();
    let mut dataset = PanelDataset::new(obs, names)?;
    dataset.dropped.missing_score = missing.len();
    Ok(SynthPanel { dataset, truth, missing })
}

/// Shape of the true mean trajectory for non-null subjects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajGenerator {
    /// `±amplitude · exp(−(t − c)² / (2·width²))` with a random center
    /// in the middle half of the window and a random sign.
    Bump,
    /// A draw from a zero-mean squared-exponential GP with variance
    /// `amplitude²` and length-scale `width`.
    GpDraw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrajConfig {
    pub subjects: usize,
    pub periods: usize,
    pub start_time: i64,
    pub fraction_nonnull: f64,
    pub phi_range: (f64, f64),
    pub v_range: (f64, f64),
    pub amplitude: f64,
    pub width: f64,
    pub generator: TrajGenerator,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthTrajConfig {
    fn default() -> Self {
        SynthTrajConfig {
            subjects: 200,
            periods: 40,
            start_time: 1970,
            fraction_nonnull: 0.2,
            phi_range: (0.05, 0.35),
            v_range: (0.5, 1.0),
            amplitude: 0.75,
            width: 12.0,
            generator: TrajGenerator::Bump,
            missing_rate: 0.0,
            seed: 1,
        }
    }
}

impl SynthTrajConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.periods == 0 {
            return Err(Error::Config("subjects and periods must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fraction_nonnull) {
            return Err(Error::Config("non-null fraction must lie in [0,1]".into()));
        }
        let (p0, p1) = self.phi_range;
        if !(0.0 <= p0 && p0 <= p1 && p1 < 1.0) {
            return Err(Error::Config("phi range must satisfy 0 <= lo <= hi < 1".into()));
        }
        let (v0, v1) = self.v_range;
        if !(0.0 < v0 && v0 <= v1 && v1.is_finite()) {
            return Err(Error::Config("v range must satisfy 0 < lo <= hi".into()));
        }
        if !(self.amplitude >= 0.0) || !(self.width > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config("amplitude must be nonnegative and width positive".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing rate must lie in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajTruth {
    pub subject: String,
    pub nonnull: bool,
    pub phi: f64,
    pub v: f64,
    /// True mean trajectory at the observed times.
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrajectories {
    pub trajectories: Vec<Trajectory>,
    pub truth: Vec<TrajTruth>,
}

/// Exactly `round(fraction · subjects)` subjects are non-null; which ones
/// is decided by a seeded shuffle.
pub fn generate_trajectories(cfg: &SynthTrajConfig) -> Result<SynthTrajectories> {
    cfg.validate()?;
    let ids = subject_ids("S", cfg.subjects);
    let n_alt = libm::round(cfg.fraction_nonnull * cfg.subjects as f64) as usize;
    let mut order: Vec<usize> = (0..cfg.subjects).collect();
    let mut shuffle_rng = keyed_rng(cfg.seed, "\u{0}labels");
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut nonnull = vec![false; cfg.subjects];
    for &i in &order[..n_alt] {
        nonnull[i] = true;
    }

    let all_times: Vec<i64> = (0..cfg.periods as i64).map(|p| cfg.start_time + p).collect();
    let mut trajectories = Vec::with_capacity(cfg.subjects);
    let mut truth = Vec::with_capacity(cfg.subjects);
    for (i, id) in ids.into_iter().enumerate() {
        let mut rng = keyed_rng(cfg.seed, &id);
        let phi = uniform(&mut rng, cfg.phi_range);
        let v = uniform(&mut rng, cfg.v_range);
        let noise = ar1_path(&all_times, phi, v, &mut rng);
        let f: Vec<f64> = if nonnull[i] {
            true_mean(cfg, &all_times, &mut rng)?
        } else {
            vec![0.0; all_times.len()]
        };
        let mut keep: Vec<usize> = (0..all_times.len())
            .filter(|_| !(cfg.missing_rate > 0.0 && rng.random::<f64>() < cfg.missing_rate))
            .collect();
        if keep.is_empty() {
            keep.push(rng.random_range(0..all_times.len()));
        }
        let times = keep.iter().map(|&k| all_times[k]).collect();
        let values = keep.iter().map(|&k| f[k] + noise[k]).collect();
        trajectories.push(Trajectory::new(id.clone(), times, values)?);
        truth.push(TrajTruth { subject: id, nonnull: nonnull[i], phi, v, f: keep.iter().map(|&k| f[k]).collect() });
    }
    Ok(SynthTrajectories { trajectories, truth })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Stationary AR(1) path with calendar-gap correlation `φ^|Δt|`.
pub(crate) fn ar1_path<R: Rng + ?Sized>(times: &[i64], phi: f64, v: f64, rng: &mut R) -> Vec<f64> {
    let s0 = 1.0 - phi * phi;
    let mut out: Vec<f64> = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let e: f64 = rng.sample(StandardNormal);
        if k == 0 {
            out.push(e * (v / s0).sqrt());
        } else {
            let a = phi.powi((times[k] - times[k - 1]).unsigned_abs() as i32);
            out.push(a * out[k - 1] + e * (v * (1.0 - a * a) / s0).sqrt());
        }
    }
    out
}

fn true_mean<R: Rng + ?Sized>(cfg: &SynthTrajConfig, times: &[i64], rng: &mut R) -> Result<Vec<f64>> {
    match cfg.generator {
        TrajGenerator::Bump => {
            let t0 = times[0] as f64;
            let span = (times.len() - 1) as f64;
            let center = t0 + span * rng.random_range(0.25..=0.75);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Ok(times
                .iter()
                .map(|&t| {
                    let d = t as f64 - center;
                    sign * cfg.amplitude * (-d * d / (2.0 * cfg.width * cfg.width)).exp()
                })
                .collect())
        }
        TrajGenerator::GpDraw => {
            let k = crate::trajtest::sqexp_covariance(times, cfg.amplitude * cfg.amplitude, cfg.width);
            let l = crate::trajtest::cholesky_factor(&k)?;
            let eps: Vec<f64> = (0..times.len()).map(|_| rng.sample(StandardNormal)).collect();
            Ok((0..times.len()).map(|i| (0..=i).map(|j| l[(i, j)] * eps[j]).sum()).collect())
        }
    }
}
