use super::*;
use crate::numkernel::Matrix;
use crate::sysmodel::Mode;
use std::collections::BTreeMap;

fn pure_noise_system() -> SwitchedLinearSystem {
    SwitchedLinearSystem {
        modes: vec![Mode {
            name: "noise".into(),
            a: Matrix::zeros(2, 2),
            b: Matrix::zeros(2, 1),
            sigma: Matrix::identity(2),
            drift: None,
        }],
        edges: vec![],
        min_dwell: 0.1,
        state_names: vec!["x0".into(), "x1".into()],
        input_names: vec!["u".into()],
        disturbance_channels: BTreeMap::new(),
    }
}

fn stable_system() -> SwitchedLinearSystem {
    let mut channels = BTreeMap::new();
    channels.insert("kick".to_string(), vec![1.0, 0.0]);
    SwitchedLinearSystem {
        modes: vec![Mode {
            name: "m0".into(),
            a: Matrix::from_rows(&[vec![-1.0, 0.2], vec![-0.1, -0.6]]),
            b: Matrix::from_rows(&[vec![0.0], vec![1.0]]),
            sigma: Matrix::from_rows(&[vec![0.1], vec![0.0]]),
            drift: None,
        }],
        edges: vec![],
        min_dwell: 0.1,
        state_names: vec!["x0".into(), "x1".into()],
        input_names: vec!["u".into()],
        disturbance_channels: channels,
    }
}

fn config(dt: f64, horizon: f64, paths: usize, seed: u64) -> SimConfig {
    SimConfig {
        dt,
        horizon,
        paths,
        seed,
        scheme: Scheme::Euler,
        disturbances: vec![],
        initial: InitialSampler::Center,
    }
}

#[test]
fn brownian_motion_variance() {
    let sys = pure_noise_system();
    let sched = ModeSchedule::single(0, 1.0);
    let cfg = config(0.01, 1.0, 10_000, 7);
    let mut sums = [0.0f64; 2];
    let mut sqsums = [0.0f64; 2];
    for path in 0..cfg.paths {
        let tr = simulate_sde(&sys, &sched, &[0.0, 0.0], ControllerSpec::None, &cfg, path as u64)
            .unwrap();
        let last = tr.states.last().unwrap();
        for i in 0..2 {
            sums[i] += last[i];
            sqsums[i] += last[i] * last[i];
        }
    }
    for i in 0..2 {
        let mean = sums[i] / cfg.paths as f64;
        let var = sqsums[i] / cfg.paths as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "channel {i} variance {var}");
        assert!(mean.abs() < 0.05, "channel {i} mean {mean}");
    }
}

#[test]
fn fixed_seed_reproduces_trace_bitwise() {
    let sys = stable_system();
    let sched = ModeSchedule::single(0, 2.0);
    let cfg = config(0.01, 2.0, 1, 42);
    let a = simulate_sde(&sys, &sched, &[0.5, -0.2], ControllerSpec::None, &cfg, 3).unwrap();
    let b = simulate_sde(&sys, &sched, &[0.5, -0.2], ControllerSpec::None, &cfg, 3).unwrap();
    assert_eq!(a.states, b.states);
    // A different path index must diverge.
    let c = simulate_sde(&sys, &sched, &[0.5, -0.2], ControllerSpec::None, &cfg, 4).unwrap();
    assert_ne!(a.states, c.states);
}

#[test]
fn noiseless_euler_tracks_zoh_nominal() {
    let mut sys = stable_system();
    sys.modes[0].sigma = Matrix::zeros(2, 1);
    let sched = ModeSchedule::single(0, 1.0);
    let dt = 1e-3;
    let steps = 1000;
    let u: Vec<Vec<f64>> = (0..steps).map(|j| vec![(j as f64 * 0.01).sin()]).collect();
    let nominal = sysmodel::integrate_nominal(&sys, &sched, &[1.0, 0.0], &u, dt).unwrap();
    let cfg = config(dt, 1.0, 1, 0);
    let em = simulate_sde(&sys, &sched, &[1.0, 0.0], ControllerSpec::Feedforward(&u), &cfg, 0)
        .unwrap();
    let mut worst = 0.0f64;
    for (a, b) in em.states.iter().zip(&nominal.states) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-3, "Euler drift error {worst}");
}

#[test]
fn exact_drift_scheme_matches_zoh_exactly_without_noise() {
    let mut sys = stable_system();
    sys.modes[0].sigma = Matrix::zeros(2, 1);
    let sched = ModeSchedule::single(0, 1.0);
    let dt = 0.01;
    let u: Vec<Vec<f64>> = (0..100).map(|j| vec![(j as f64 * 0.1).cos()]).collect();
    let nominal = sysmodel::integrate_nominal(&sys, &sched, &[1.0, 0.0], &u, dt).unwrap();
    let mut cfg = config(dt, 1.0, 1, 0);
    cfg.scheme = Scheme::ExactDrift;
    let tr = simulate_sde(&sys, &sched, &[1.0, 0.0], ControllerSpec::Feedforward(&u), &cfg, 0)
        .unwrap();
    for (a, b) in tr.states.iter().zip(&nominal.states) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn disturbance_window_shifts_state() {
    let sys = stable_system();
    let sched = ModeSchedule::single(0, 1.0);
    let mut cfg = config(0.01, 1.0, 1, 5);
    cfg.disturbances =
        vec![Disturbance { start: 0.0, end: 0.2, channel: "kick".into(), magnitude: 2.0 }];
    let with = simulate_sde(&sys, &sched, &[0.0, 0.0], ControllerSpec::None, &cfg, 0).unwrap();
    let without = simulate_sde(
        &sys,
        &sched,
        &[0.0, 0.0],
        ControllerSpec::None,
        &config(0.01, 1.0, 1, 5),
        0,
    )
    .unwrap();
    // Same noise stream, so the gap is exactly the deterministic response.
    let gap = with.states[20][0] - without.states[20][0];
    assert!(gap > 0.3, "kick must raise x0, gap {gap}");

    let unknown = SimConfig {
        disturbances: vec![Disturbance {
            start: 0.0,
            end: 0.1,
            channel: "bogus".into(),
            magnitude: 1.0,
        }],
        ..cfg
    };
    assert!(matches!(
        simulate_sde(&sys, &sched, &[0.0, 0.0], ControllerSpec::None, &unknown, 0),
        Err(SimError::UnknownChannel { .. })
    ));
}

fn band_formula() -> MtlFormula {
    use crate::mtl::LinearPredicate;
    MtlFormula::always(
        0.0,
        1.0,
        MtlFormula::And(vec![
            MtlFormula::Pred(
                LinearPredicate::normalized(vec![1.0, 0.0], vec![0.0], 2.0, "x0<=2").unwrap(),
            ),
            MtlFormula::Pred(
                LinearPredicate::normalized(vec![-1.0, 0.0], vec![0.0], 2.0, "x0>=-2").unwrap(),
            ),
        ]),
    )
}

#[test]
fn batch_deterministic_and_parallel_agrees_with_sequential() {
    let sys = stable_system();
    let sched = ModeSchedule::single(0, 1.0);
    let formula = band_formula();
    let inputs = BatchInputs {
        sys: &sys,
        sched: &sched,
        formula: &formula,
        initial: InitialSpec { center: vec![0.1, 0.0], metric: None },
        controller: ControllerSpec::None,
        nominal: None,
        certificate: None,
    };
    let cfg = config(0.01, 1.0, 64, 99);
    let a = run_batch(&inputs, &cfg).unwrap();
    let b = run_batch(&inputs, &cfg).unwrap();
    assert_eq!(a.robustness, b.robustness, "identical seed and config");
    let c = run_batch_sequential(&inputs, &cfg).unwrap();
    assert_eq!(a.robustness, c.robustness, "parallel and sequential agree");
    assert_eq!(a.satisfied, a.robustness.iter().filter(|r| **r >= 0.0).count());
}

#[test]
fn deterministic_feasible_batch_fully_satisfies() {
    let mut sys = stable_system();
    sys.modes[0].sigma = Matrix::zeros(2, 1);
    let sched = ModeSchedule::single(0, 1.0);
    let formula = band_formula();
    let inputs = BatchInputs {
        sys: &sys,
        sched: &sched,
        formula: &formula,
        initial: InitialSpec { center: vec![0.1, 0.0], metric: None },
        controller: ControllerSpec::None,
        nominal: None,
        certificate: None,
    };
    let report = run_batch(&inputs, &config(0.01, 1.0, 16, 1)).unwrap();
    assert_eq!(report.satisfied, 16);
    assert_eq!(report.satisfaction_rate, 1.0);
}

#[test]
fn weak_convergence_in_dt() {
    // Mean terminal state of the linear SDE follows the deterministic
    // recursion; halving dt must shrink the gap to the exact flow
    // proportionally.
    let sys = stable_system();
    let sched = ModeSchedule::single(0, 1.0);
    let x0 = [1.0, -0.5];
    let exact = {
        let (ad, _) =
            crate::numkernel::expm_with_input(&sys.modes[0].a, &sys.modes[0].b, 1.0).unwrap();
        ad.matvec(&x0)
    };
    let mut gaps = Vec::new();
    for dt in [0.02, 0.01, 0.005] {
        let cfg = config(dt, 1.0, 4000, 11);
        let mut mean = [0.0f64; 2];
        for path in 0..cfg.paths {
            let tr = simulate_sde(&sys, &sched, &x0, ControllerSpec::None, &cfg, path as u64)
                .unwrap();
            let last = tr.states.last().unwrap();
            mean[0] += last[0];
            mean[1] += last[1];
        }
        mean[0] /= cfg.paths as f64;
        mean[1] /= cfg.paths as f64;
        let gap = ((mean[0] - exact[0]).powi(2) + (mean[1] - exact[1]).powi(2)).sqrt();
        gaps.push(gap);
    }
    // O(dt) slope: each halving at least roughly halves the gap, with slack
    // for the Monte Carlo noise floor.
    assert!(gaps[1] < gaps[0], "gaps {gaps:?}");
    assert!(gaps[2] < 0.75 * gaps[0], "gaps {gaps:?}");
}

#[test]
fn excursion_stats_limits() {
    // No noise: zero exceedance at every positive gamma.
    let rows = excursion_stats(&[0.0, 0.0, 0.0], 0.1, 5.0, &[0.1, 1.0, 10.0]);
    for r in &rows {
        assert_eq!(r.empirical, 0.0);
    }
    // Large gamma limit: empirical exceedance vanishes.
    let sups = [0.5, 1.2, 0.9, 2.0];
    let rows = excursion_stats(&sups, 0.1, 5.0, &[1e6]);
    assert_eq!(rows[0].empirical, 0.0);
    assert!(rows[0].bound < 1e-5);
    // Bound is capped at 1.
    let rows = excursion_stats(&sups, 10.0, 5.0, &[0.1]);
    assert_eq!(rows[0].bound, 1.0);
}

#[test]
fn uniform_ball_sampler_stays_inside() {
    let metric = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
    let spec = InitialSpec { center: vec![1.0, -1.0], metric: Some((metric.clone(), 0.7)) };
    for path in 0..200 {
        let x = spec.sample(InitialSampler::UniformInBall, 17, path).unwrap();
        let diff: Vec<f64> = x.iter().zip(&spec.center).map(|(a, b)| a - b).collect();
        let q = metric.quad_form(&diff);
        assert!(q <= 0.7 + 1e-9, "sample outside the ball: {q}");
    }
    // Not everything collapses to the center.
    let a = spec.sample(InitialSampler::UniformInBall, 17, 0).unwrap();
    let b = spec.sample(InitialSampler::UniformInBall, 17, 1).unwrap();
    assert_ne!(a, b);
}

#[test]
fn normal_draw_is_pure_and_spreads() {
    let a = normal_draw(1, 2, 3, 4, 5);
    let b = normal_draw(1, 2, 3, 4, 5);
    assert_eq!(a, b);
    // Basic moments over a modest sample.
    let n = 20_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for i in 0..n {
        let v = normal_draw(9, 1, i as u64, 0, 0);
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    assert!(mean.abs() < 0.03, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}
