use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use super::covariance::{cholesky_with_jitter, cross_sqexp, sqexp_covariance};
use super::model::{consecutive_lags, gaussian_log_density_chol, Ar1Table, NoiseParams, TrajTestConfig, Trajectory};
use super::predictive::{bands_from_components, PredictiveBands, DEFAULT_LEVELS};
use crate::error::{Error, Result};
#[allow(unused_imports)]
use crate::math::Real;
use crate::seed::keyed_rng;

/// Per-subject Gibbs state. `gamma = false` implies `f ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectState {
    pub gamma: bool,
    /// Mean trajectory at the observed times.
    pub f: Vec<f64>,
    pub phi: f64,
    pub v: f64,
}

impl SubjectState {
    pub fn null(n: usize, phi: f64, v: f64) -> Self {
        SubjectState { gamma: false, f: vec![0.0; n], phi, v }
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams { phi: self.phi, v: self.v }
    }
}

/// Fixed per-subject quantities: the GP kernel, its factor, and the
/// kriging weights for the forecast horizon.
#[derive(Debug, Clone)]
pub(crate) struct SubjectCache {
    lags: Vec<usize>,
    k: DMatrix<f64>,
    k_factor: DMatrix<f64>,
    pred_weights: DMatrix<f64>,
    pred_var: Vec<f64>,
}

impl SubjectCache {
    pub(crate) fn new(traj: &Trajectory, cfg: &TrajTestConfig, horizon: usize) -> Result<Self> {
        let times = traj.times();
        let k = sqexp_covariance(times, cfg.gp_amplitude, cfg.gp_length_scale);
        let chol = cholesky_with_jitter(&k)?;
        let last = *times.last().unwrap();
        let future: Vec<i64> = (1..=horizon as i64).map(|h| last + h).collect();
        let k_of = cross_sqexp(times, &future, cfg.gp_amplitude, cfg.gp_length_scale);
        // K_oo⁻¹ K_of, transposed into kriging weights
        let sol = chol.solve(&k_of);
        let pred_weights = sol.transpose();
        let pred_var = (0..horizon)
            .map(|h| {
                let explained: f64 = (0..times.len()).map(|j| pred_weights[(h, j)] * k_of[(j, h)]).sum();
                (cfg.gp_amplitude - explained).max(0.0)
            })
            .collect();
        Ok(SubjectCache { lags: consecutive_lags(times), k, k_factor: chol.unpack(), pred_weights, pred_var })
    }

    /// Predictive `(mean, variance)` at each of the next `horizon` periods
    /// given one state: GP extension of `f` plus the AR(1) extension of the
    /// last residual.
    pub(crate) fn predictive_moments(&self, traj: &Trajectory, s: &SubjectState) -> Vec<(f64, f64)> {
        let n = traj.len();
        let e_last = traj.values()[n - 1] - s.f[n - 1];
        let s0 = 1.0 - s.phi * s.phi;
        (0..self.pred_var.len())
            .map(|h| {
                let a = s.phi.powi(h as i32 + 1);
                let mut mean = a * e_last;
                let mut var = s.v * (1.0 - a * a) / s0;
                if s.gamma {
                    mean += (0..n).map(|j| self.pred_weights[(h, j)] * s.f[j]).sum::<f64>();
                    var += self.pred_var[h];
                }
                (mean, var)
            })
            .collect()
    }
}

/// Gibbs sampler for the spike-and-slab trajectory model.
///
/// Each subject draws from its own random stream keyed by its id, so
/// results do not depend on the order in which subjects are supplied.
#[derive(Debug, Clone)]
pub struct TrajSampler<'a> {
    trajs: &'a [Trajectory],
    cfg: TrajTestConfig,
    grid: Vec<Ar1Table>,
    max_lag: usize,
    caches: Vec<SubjectCache>,
    states: Vec<SubjectState>,
    rngs: Vec<ChaCha8Rng>,
    weight_rng: ChaCha8Rng,
    w: f64,
}

impl<'a> TrajSampler<'a> {
    pub fn new(trajs: &'a [Trajectory], cfg: &TrajTestConfig) -> Result<Self> {
        cfg.validate()?;
        let mut seen = BTreeSet::new();
        for t in trajs {
            if !seen.insert(t.subject.as_str()) {
                return Err(Error::Domain(format!("subject `{}` appears twice", t.subject)));
            }
        }
        let max_lag = trajs.iter().flat_map(|t| consecutive_lags(t.times())).max().unwrap_or(1).max(1);
        let grid: Vec<Ar1Table> = cfg.phi_grid_points().into_iter().map(|p| Ar1Table::new(p, max_lag)).collect();
        let phi0 = grid[grid.len() / 2].phi;
        let caches = trajs.iter().map(|t| SubjectCache::new(t, cfg, cfg.horizon)).collect::<Result<Vec<_>>>()?;
        let states = trajs.iter().map(|t| SubjectState::null(t.len(), phi0, 1.0)).collect();
        let seed = cfg.schedule.seed;
        let rngs = trajs.iter().map(|t| keyed_rng(seed, &t.subject)).collect();
        let (a, b) = cfg.weight_prior;
        Ok(TrajSampler {
            trajs,
            cfg: cfg.clone(),
            grid,
            max_lag,
            caches,
            states,
            rngs,
            weight_rng: keyed_rng(seed, "\u{0}mixture-weight"),
            w: a / (a + b),
        })
    }

    pub fn states(&self) -> &[SubjectState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [SubjectState] {
        &mut self.states
    }

    pub fn weight(&self) -> f64 {
        self.w
    }

    pub fn set_weight(&mut self, w: f64) {
        self.w = w.clamp(0.0, 1.0);
    }

    /// Steps (i)–(iv) for every subject given the mixture weight `w`:
    /// model indicator, mean trajectory, innovation variance, AR coefficient.
    pub fn update_subjects(&mut self, w: f64) -> Result<()> {
        for i in 0..self.trajs.len() {
            update_subject(
                &self.trajs[i],
                &self.caches[i],
                &mut self.states[i],
                w,
                &self.cfg,
                &self.grid,
                self.max_lag,
                &mut self.rngs[i],
            )?;
        }
        Ok(())
    }

    /// Step (v): `w ~ Beta(A + #{γ=1}, B + #{γ=0})`.
    pub fn update_weight(&mut self) {
        let ones = self.states.iter().filter(|s| s.gamma).count() as f64;
        let zeros = self.states.len() as f64 - ones;
        let (a, b) = self.cfg.weight_prior;
        self.w = Beta::new(a + ones, b + zeros).expect("positive beta parameters").sample(&mut self.weight_rng);
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self) -> Result<()> {
        self.update_subjects(self.w)?;
        self.update_weight();
        Ok(())
    }

    pub(crate) fn cache(&self, i: usize) -> &SubjectCache {
        &self.caches[i]
    }
}

#[allow(clippy::too_many_arguments)]
fn update_subject<R: Rng + ?Sized>(
    traj: &Trajectory,
    cache: &SubjectCache,
    state: &mut SubjectState,
    w: f64,
    cfg: &TrajTestConfig,
    grid: &[Ar1Table],
    max_lag: usize,
    rng: &mut R,
) -> Result<()> {
    state.noise().validate()?;
    let z = traj.values();
    let n = z.len();
    let lags = &cache.lags;
    let owned;
    let table = match grid.iter().find(|t| t.phi == state.phi) {
        Some(t) => t,
        None => {
            owned = Ar1Table::new(state.phi, max_lag);
            &owned
        }
    };

    // (i) model indicator, f integrated out
    let mut ks = cache.k.clone();
    table.add_covariance(&mut ks, lags, state.v);
    let chol = cholesky_with_jitter(&ks)?;
    let gamma = if w <= 0.0 {
        false
    } else if w >= 1.0 {
        true
    } else {
        let (q, ld) = table.quad_logdet(z, lags);
        let m0 = -0.5 * n as f64 * (2.0 * core::f64::consts::PI * state.v).ln() - 0.5 * ld - 0.5 * q / state.v;
        let m1 = gaussian_log_density_chol(z, &chol);
        let logit = w.ln() - (1.0 - w).ln() + m1 - m0;
        rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp())
    };
    state.gamma = gamma;

    // (ii) f | γ=1 by Matheron's rule: f = f₀ + K (K+Σ)⁻¹ (z − f₀ − e₀)
    if gamma {
        let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f0 = &cache.k_factor * eps;
        let mut resid = DVector::zeros(n);
        let mut e_prev = 0.0;
        for k in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let e0 = if k == 0 {
                e * (state.v / table.s0).sqrt()
            } else {
                let l = lags[k];
                table.a[l] * e_prev + e * (state.v * table.cond[l]).sqrt()
            };
            e_prev = e0;
            resid[k] = z[k] - f0[k] - e0;
        }
        let f = f0 + &cache.k * chol.solve(&resid);
        state.f.copy_from_slice(f.as_slice());
    } else {
        state.f.iter_mut().for_each(|v| *v = 0.0);
    }
    let r: Vec<f64> = z.iter().zip(&state.f).map(|(a, b)| a - b).collect();

    // (iii) v | r, φ
    let (q, _) = table.quad_logdet(&r, lags);
    let shape = cfg.ig_shape + 0.5 * n as f64;
    let scale = cfg.ig_scale + 0.5 * q;
    let precision: f64 = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters").sample(rng);
    state.v = 1.0 / precision;

    // (iv) φ | r, v on the grid
    let logw: Vec<f64> = grid
        .iter()
        .map(|t| {
            let (q, ld) = t.quad_logdet(&r, lags);
            -0.5 * ld - 0.5 * q / state.v
        })
        .collect();
    state.phi = grid[sample_log_weights(&logw, rng)].phi;
    Ok(())
}

fn sample_log_weights<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> usize {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Whether a subject has enough history for its probability to be reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryStatus {
    Reported,
    InsufficientHistory,
}

impl HistoryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            HistoryStatus::Reported => "ok",
            HistoryStatus::InsufficientHistory => "insufficient-history",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub subject: String,
    pub n: usize,
    pub status: HistoryStatus,
    /// Posterior probability of a nonzero mean trajectory; `None` for
    /// subjects with insufficient history.
    pub inclusion_probability: Option<f64>,
    /// Fraction of retained sweeps with `γ = 1`, reported regardless of
    /// history length.
    pub gamma_frequency: f64,
    /// Posterior mean of `f` at the observed times over sweeps with `γ = 1`.
    pub mean_trajectory: Option<Vec<f64>>,
    pub bands: PredictiveBands,
    /// Posterior mean of the global mixture weight.
    pub weight_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRun {
    pub results: Vec<TrajectoryResult>,
    pub weight_mean: f64,
    pub weight_prior_mean: f64,
    pub retained: usize,
}

/// Runs the Gibbs sampler over all trajectories and summarizes the
/// retained sweeps.
pub fn run_trajectory_test(trajs: &[Trajectory], cfg: &TrajTestConfig) -> Result<TrajectoryRun> {
    let mut sampler = TrajSampler::new(trajs, cfg)?;
    let n_subj = trajs.len();
    let mut gamma_sum = vec![0usize; n_subj];
    let mut f_sum: Vec<Vec<f64>> = trajs.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut components: Vec<Vec<Vec<(f64, f64)>>> =
        (0..n_subj).map(|_| vec![Vec::with_capacity(cfg.retained()); cfg.horizon]).collect();
    let mut w_sum = 0.0;
    let mut retained = 0;
    let s = cfg.schedule;
    for sweep in 0..s.sweeps {
        sampler.sweep()?;
        if sweep < s.burn_in || !(sweep - s.burn_in).is_multiple_of(s.thin) {
            continue;
        }
        retained += 1;
        w_sum += sampler.weight();
        for (i, st) in sampler.states().iter().enumerate() {
            if st.gamma {
                gamma_sum[i] += 1;
                for (a, b) in f_sum[i].iter_mut().zip(&st.f) {
                    *a += b;
                }
            }
            for (h, m) in sampler.cache(i).predictive_moments(&trajs[i], st).into_iter().enumerate() {
                components[i][h].push((m.0, m.1.sqrt()));
            }
        }
    }
    let weight_mean = w_sum / retained as f64;
    let results = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let freq = gamma_sum[i] as f64 / retained as f64;
            let status = if t.len() < cfg.min_history {
                HistoryStatus::InsufficientHistory
            } else {
                HistoryStatus::Reported
            };
            let last = *t.times().last().unwrap();
            let times: Vec<i64> = (1..=cfg.horizon as i64).map(|h| last + h).collect();
            TrajectoryResult {
                subject: t.subject.clone(),
                n: t.len(),
                status,
                inclusion_probability: (status == HistoryStatus::Reported).then_some(freq),
                gamma_frequency: freq,
                mean_trajectory: (gamma_sum[i] > 0)
                    .then(|| f_sum[i].iter().map(|v| v / gamma_sum[i] as f64).collect()),
                bands: bands_from_components(times, &components[i], &DEFAULT_LEVELS),
                weight_mean,
            }
        })
        .collect();
    let (a, b) = cfg.weight_prior;
    Ok(TrajectoryRun { results, weight_mean, weight_prior_mean: a / (a + b), retained })
}

/// Pooled predictive bands over `horizon` future periods from a set of
/// retained subject states, model-averaged over `γ`.
pub fn posterior_predictive(
    traj: &Trajectory,
    draws: &[SubjectState],
    cfg: &TrajTestConfig,
    horizon: usize,
    levels: &[f64],
) -> Result<PredictiveBands> {
    if horizon == 0 {
        return Err(Error::Domain("forecast horizon must be at least 1".into()));
    }
    if draws.is_empty() {
        return Err(Error::State("no retained draws for posterior prediction".into()));
    }
    for d in draws {
        d.noise().validate()?;
        if d.f.len() != traj.len() {
            return Err(Error::Domain("draw does not match trajectory length".into()));
        }
    }
    let cache = SubjectCache::new(traj, cfg, horizon)?;
    let mut comps = vec![Vec::with_capacity(draws.len()); horizon];
    for d in draws {
        for (h, m) in cache.predictive_moments(traj, d).into_iter().enumerate() {
            comps[h].push((m.0, m.1.sqrt()));
        }
    }
    let last = *traj.times().last().unwrap();
    let times = (1..=horizon as i64).map(|h| last + h).collect();
    Ok(bands_from_components(times, &comps, levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_trajectories, SynthTrajConfig};
    use crate::trajtest::TrajSchedule;

    fn quick(seed: u64) -> TrajTestConfig {
        TrajTestConfig { schedule: TrajSchedule { sweeps: 300, burn_in: 100, thin: 2, seed }, ..Default::default() }
    }

    fn cohort(n: usize) -> Vec<Trajectory> {
        generate_trajectories(&SynthTrajConfig { subjects: n, periods: 15, fraction_nonnull: 0.5, ..Default::default() })
            .unwrap()
            .trajectories
    }

    #[test]
    fn zero_weight_forces_null() {
        let trajs = cohort(8);
        let mut s = TrajSampler::new(&trajs, &quick(1)).unwrap();
        for st in s.states_mut() {
            st.gamma = true;
        }
        s.update_subjects(0.0).unwrap();
        assert!(s.states().iter().all(|st| !st.gamma && st.f.iter().all(|v| *v == 0.0)));
        s.update_subjects(1.0).unwrap();
        assert!(s.states().iter().all(|st| st.gamma));
    }

    #[test]
    fn rejects_duplicate_subjects() {
        let t = Trajectory::new("a", vec![1, 2], vec![0.1, 0.2]).unwrap();
        let trajs = vec![t.clone(), t];
        assert!(matches!(TrajSampler::new(&trajs, &quick(1)), Err(Error::Domain(_))));
    }

    #[test]
    fn deterministic_and_order_free() {
        let trajs = cohort(6);
        let a = run_trajectory_test(&trajs, &quick(3)).unwrap();
        let b = run_trajectory_test(&trajs, &quick(3)).unwrap();
        assert_eq!(a, b);
        let mut rev = trajs.clone();
        rev.reverse();
        let c = run_trajectory_test(&rev, &quick(3)).unwrap();
        for r in &a.results {
            let other = c.results.iter().find(|x| x.subject == r.subject).unwrap();
            assert_eq!(r.gamma_frequency, other.gamma_frequency);
        }
    }

    #[test]
    fn short_histories_are_flagged() {
        let trajs = vec![
            Trajectory::new("short", (0..5).collect(), vec![0.1; 5]).unwrap(),
            Trajectory::new("long", (0..12).collect(), vec![0.1; 12]).unwrap(),
        ];
        let run = run_trajectory_test(&trajs, &quick(2)).unwrap();
        assert_eq!(run.results[0].status, HistoryStatus::InsufficientHistory);
        assert!(run.results[0].inclusion_probability.is_none());
        assert!(run.results[1].inclusion_probability.is_some());
        assert_eq!(run.results[1].bands.times, vec![12, 13, 14, 15, 16]);
    }

    #[test]
    fn predictive_requires_draws() {
        let t = Trajectory::new("a", vec![1, 2], vec![0.1, 0.2]).unwrap();
        let cfg = TrajTestConfig::default();
        assert!(matches!(posterior_predictive(&t, &[], &cfg, 5, &DEFAULT_LEVELS), Err(Error::State(_))));
        let d = SubjectState::null(2, 0.5, 1.0);
        assert!(matches!(posterior_predictive(&t, &[d], &cfg, 0, &DEFAULT_LEVELS), Err(Error::Domain(_))));
    }
}
