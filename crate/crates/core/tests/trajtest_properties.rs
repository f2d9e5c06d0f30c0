use peerbench_core::seed::keyed_rng;
use peerbench_core::synth::{generate_trajectories, SynthTrajConfig};
use peerbench_core::trajtest::{
    ar1_covariance, cholesky_factor, log_marginal, run_trajectory_test, sqexp_covariance, NoiseParams, TrajSampler,
    TrajSchedule, TrajTestConfig, Trajectory,
};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn schedule(sweeps: usize, seed: u64) -> TrajTestConfig {
    TrajTestConfig { schedule: TrajSchedule { sweeps, burn_in: sweeps / 5, thin: 2, seed }, ..Default::default() }
}

#[test]
fn posterior_mean_trajectories_are_shrunk() {
    let s = generate_trajectories(&SynthTrajConfig { subjects: 40, periods: 25, fraction_nonnull: 0.5, seed: 12, ..Default::default() })
        .unwrap();
    let run = run_trajectory_test(&s.trajectories, &schedule(1500, 12)).unwrap();
    let mut checked = 0;
    for (t, r) in s.trajectories.iter().zip(&run.results) {
        let bound = t.values().iter().fold(0.0f64, |m, z| m.max(z.abs()));
        if let Some(f) = &r.mean_trajectory {
            checked += 1;
            assert!(f.iter().all(|x| x.abs() <= bound), "{}: {f:?} exceeds {bound}", r.subject);
        }
    }
    assert!(checked > 0);
}

#[test]
fn slab_marginal_matches_monte_carlo_over_f() {
    let cfg = TrajTestConfig::default();
    let times = vec![2001, 2002, 2004];
    let z = vec![0.4, -0.2, 0.9];
    let noise = NoiseParams { phi: 0.3, v: 0.6 };
    let traj = Trajectory::new("s", times.clone(), z.clone()).unwrap();
    let exact = log_marginal(&traj, true, noise, &cfg).unwrap().exp();
    let l = cholesky_factor(&sqexp_covariance(&times, cfg.gp_amplitude, cfg.gp_length_scale)).unwrap();
    let mut rng = keyed_rng(3, "mc-marginal");
    let draws = 100_000;
    let mut sum = 0.0;
    for _ in 0..draws {
        let e: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        // residual z − f with f = L e, scored under the noise-only model
        let r: Vec<f64> = (0..3).map(|i| z[i] - (0..=i).map(|j| l[(i, j)] * e[j]).sum::<f64>()).collect();
        let rt = Trajectory::new("s", times.clone(), r).unwrap();
        sum += log_marginal(&rt, false, noise, &cfg).unwrap().exp();
    }
    let mc = sum / draws as f64;
    assert!((mc / exact - 1.0).abs() < 0.02, "monte carlo {mc} closed form {exact}");
}

#[test]
fn evidence_grows_with_signal_strength() {
    let cfg = TrajTestConfig::default();
    let times: Vec<i64> = (0..20).collect();
    let mut rng = keyed_rng(8, "evidence-noise");
    let noise: Vec<f64> = (0..20)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.6 * e
        })
        .collect();
    let bump = |t: f64| (-(t - 10.0).powi(2) / (2.0 * 16.0)).exp();
    let mut first = None;
    let mut last = -1.0;
    for c in [0.0, 0.5, 1.0, 2.0] {
        let z: Vec<f64> = times.iter().zip(&noise).map(|(&t, e)| c * bump(t as f64) + e).collect();
        let one = vec![Trajectory::new("s", times.clone(), z).unwrap()];
        let mut sampler = TrajSampler::new(&one, &cfg).unwrap();
        let (burn, kept) = (500, 20_000);
        let mut hits = 0;
        for i in 0..burn + kept {
            sampler.update_subjects(0.5).unwrap();
            if i >= burn && sampler.states()[0].gamma {
                hits += 1;
            }
        }
        let p = hits as f64 / kept as f64;
        assert!(p >= last - 0.01, "c = {c}: {p} after {last}");
        first.get_or_insert(p);
        last = p;
    }
    assert!(last > first.unwrap() + 0.3, "{first:?} → {last}");
}

#[test]
fn subject_order_does_not_matter() {
    let s = generate_trajectories(&SynthTrajConfig { subjects: 30, periods: 20, seed: 4, ..Default::default() }).unwrap();
    let cfg = TrajTestConfig::default();
    let forward = run_trajectory_test(&s.trajectories, &cfg).unwrap();
    let reversed: Vec<Trajectory> = s.trajectories.iter().rev().cloned().collect();
    let backward = run_trajectory_test(&reversed, &cfg).unwrap();
    for r in &forward.results {
        let other = backward.results.iter().find(|b| b.subject == r.subject).unwrap();
        let (a, b) = (r.inclusion_probability.unwrap(), other.inclusion_probability.unwrap());
        assert!((a - b).abs() <= 0.02, "{}: {a} vs {b}", r.subject);
    }
}

fn sorted_times() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::btree_set(1950i64..2020, 1..25).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariances_are_symmetric_and_factorable(
        times in sorted_times(),
        phi in 0.0f64..0.99,
        v in 0.01f64..5.0,
        tau2 in 0.01f64..3.0,
        ell in 0.5f64..30.0,
    ) {
        let a = ar1_covariance(&times, phi, v).unwrap();
        let k = sqexp_covariance(&times, tau2, ell);
        for m in [&a, &k, &(&a + &k)] {
            prop_assert_eq!(m, &m.transpose());
            prop_assert!(cholesky_factor(m).is_ok());
        }
    }
}
