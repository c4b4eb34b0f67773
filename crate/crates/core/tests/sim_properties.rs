use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use posdelay::config::{preset, ScenarioConfig, PRESETS};
use posdelay::controller::gate;
use posdelay::signals::ReferenceTrajectory;
use posdelay::sim::{max_abs_e1, run_scenario, Simulation, Trajectory, POSITIVITY_TOL};

fn run(cfg: &ScenarioConfig) -> Trajectory {
    run_scenario(&cfg.to_scenario().unwrap(), &cfg.sim).unwrap()
}

#[test]
fn zero_input_decay_matches_matrix_exponential() {
    let mut cfg = preset("case1_1").unwrap();
    cfg.sim.enable_controller = false;
    cfg.sim.enable_saturation = false;
    cfg.sim.enable_delay = false;
    cfg.sim.record_stride = 1;
    let traj = run(&cfg);
    assert_eq!(traj.rows().len(), 10_001);

    let d = &cfg.plant.d;
    let a = Matrix3::new(-d[0], 1.0, 0.0, 0.0, -d[1], 1.0, 0.0, 0.0, -d[2]);
    let x0 = Vector3::new(500.0, 50.0, 5.0);
    for (k, row) in traj.rows().iter().enumerate() {
        if k % 50 == 0 {
            let exact = (a * row.t).exp() * x0;
            for i in 0..3 {
                let rel = (row.x[i] - exact[i]).abs() / exact[i].abs();
                assert!(
                    rel < 1e-7,
                    "x{} at t={}: {} vs {}",
                    i + 1,
                    row.t,
                    row.x[i],
                    exact[i]
                );
            }
        }
    }
    for w in traj.rows().windows(2) {
        for i in 0..3 {
            assert!(w[1].x[i] <= w[0].x[i] && w[1].x[i] >= 0.0);
        }
    }
}

#[test]
fn origin_is_an_equilibrium() {
    let mut cfg = preset("case1_2").unwrap();
    cfg.sim.t_end = 20.0;
    let mut sc = cfg.to_scenario().unwrap();
    sc.x0 = vec![0.0; 3];
    sc.reference = ReferenceTrajectory::tanh_squared(0.0, 0.15);
    let traj = run_scenario(&sc, &cfg.sim).unwrap();
    for row in traj.rows() {
        assert!(
            row.x.iter().all(|&v| v == 0.0),
            "left origin at t={}",
            row.t
        );
        assert_eq!(row.u_applied, 0.0);
    }
}

#[test]
fn runs_are_bit_identical() {
    let cfg = preset("case1_3").unwrap();
    assert_eq!(run(&cfg), run(&cfg));
}

#[test]
fn halving_dt_converges() {
    let finals: Vec<f64> = [0.01, 0.005, 0.0025]
        .iter()
        .map(|&dt| {
            let mut cfg = preset("case1_1").unwrap();
            cfg.sim.dt = dt;
            cfg.sim.monitor_enabled = false;
            cfg.sim.record_stride = 1000;
            run(&cfg).x1().last().unwrap()
        })
        .collect();
    let d1 = (finals[0] - finals[1]).abs();
    let d2 = (finals[1] - finals[2]).abs();
    assert!(d2 < 4.0 * d1 || d2 < 1e-10, "{finals:?}");
}

#[test]
fn presets_stay_positive_with_finite_nonnegative_functional() {
    for p in PRESETS {
        let traj = run(&preset(p).unwrap());
        assert!(traj.observed.min_state >= -POSITIVITY_TOL, "{p}");
        assert!(traj.observed.min_applied_u >= 0.0, "{p}");
        for row in traj.rows() {
            let lk = row.lk.expect("monitor on");
            assert!(lk.v.is_finite() && lk.v >= 0.0, "{p} t={}", row.t);
            assert!(lk.q1 >= 0.0 && lk.q2 >= 0.0 && lk.q3 >= 0.0);
            assert_eq!(row.gate, gate(row.e1()));
        }
    }
}

#[test]
fn error_band_is_not_growing() {
    for p in PRESETS {
        let mut cfg = preset(p).unwrap();
        cfg.sim.t_end = 200.0;
        cfg.sim.monitor_enabled = false;
        let traj = run(&cfg);
        let tail = max_abs_e1(&traj, 160.0, 200.0);
        let before = max_abs_e1(&traj, 120.0, 160.0);
        assert!(tail <= before, "{p}: tail {tail} > earlier {before}");
    }
}

/// Between switches `u' = k e_a`, so the recorded input and `e_a` must agree
/// by finite differences, and `e_u` must equal minus the integral of `u'`
/// over the last `tau_hat`.
#[test]
fn input_rate_model_is_consistent() {
    let mut cfg = preset("case1_1").unwrap();
    cfg.sim.record_stride = 1;
    cfg.sim.t_end = 60.0;
    let traj = run(&cfg);
    let rows = traj.rows();
    let k = cfg.gains.k;
    let dt = cfg.sim.dt;
    let tau_hat = rows[0].tau_hat;
    let lag = (tau_hat / dt).round() as usize;
    assert!((lag as f64 * dt - tau_hat).abs() < 1e-12);

    let on = |i: usize| rows[i].gate == 1 && !rows[i].clamp_flag;
    let (mut checked, mut good_diff, mut good_int) = (0, 0, 0);
    for i in lag + 1..rows.len() - 1 {
        if !(i - lag - 1..=i + 1).all(on) {
            continue;
        }
        checked += 1;
        let fd = (rows[i + 1].u_applied - rows[i - 1].u_applied) / (2.0 * dt);
        let model = k * rows[i].e_a;
        if (fd - model).abs() <= 1e-3 * (1.0 + model.abs()) {
            good_diff += 1;
        }
        let integral: f64 = (i - lag..i)
            .map(|j| 0.5 * dt * k * (rows[j].e_a + rows[j + 1].e_a))
            .sum();
        if (rows[i].e_u + integral).abs() <= 1e-3 * (1.0 + integral.abs()) {
            good_int += 1;
        }
    }
    assert!(checked > 1000);
    // the delayed input jumps once, a delay after the switch
    assert!(
        good_diff as f64 >= 0.99 * checked as f64,
        "{good_diff}/{checked}"
    );
    assert!(
        good_int as f64 >= 0.99 * checked as f64,
        "{good_int}/{checked}"
    );
}

/// With the gate closed the input is frozen, so wherever the error frame
/// shrinks the functional must not grow.
#[test]
fn functional_decreases_on_gate_off_decay() {
    let mut cfg = preset("case1_1").unwrap();
    cfg.sim.record_stride = 1;
    cfg.sim.t_end = 20.0;
    let traj = run(&cfg);
    let quad = |r: &posdelay::sim::TrajectoryRow| {
        r.e.iter().map(|e| e * e).sum::<f64>() + r.e_a * r.e_a + r.e_u * r.e_u
    };
    let mut checked = 0;
    for w in traj.rows().windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.gate == 0 && b.gate == 0 && quad(b) < quad(a) {
            let (va, vb) = (a.lk.unwrap().v, b.lk.unwrap().v);
            assert!(vb <= va * (1.0 + 1e-9), "V rose at t={}: {va} -> {vb}", b.t);
            checked += 1;
        }
    }
    assert!(checked > 100, "only {checked} samples checked");
}

#[test]
fn stepwise_driver_matches_batch_run() {
    let cfg = preset("case1_4").unwrap();
    let sc = cfg.to_scenario().unwrap();
    let batch = run_scenario(&sc, &cfg.sim).unwrap();
    let mut sim = Simulation::new(sc, cfg.sim.clone()).unwrap();
    for _ in 0..cfg.sim.steps() {
        sim.step().unwrap();
    }
    assert_eq!(sim.state().x, batch.rows().last().unwrap().x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_initial_conditions_stay_positive(
        x1 in 1.0f64..1000.0,
        x2 in 0.1f64..200.0,
        x3 in 0.5f64..20.0,
        which in 0usize..5,
    ) {
        let mut cfg = preset(PRESETS[which]).unwrap();
        cfg.plant.x0 = vec![x1, x2, x3];
        cfg.sim.t_end = 50.0;
        cfg.sim.monitor_enabled = false;
        let traj = run(&cfg);
        prop_assert!(traj.observed.min_state >= -POSITIVITY_TOL);
        prop_assert!(traj.observed.min_applied_u >= 0.0);
        for row in traj.rows() {
            prop_assert!(row.x.iter().all(|&v| v >= -POSITIVITY_TOL));
            prop_assert!(row.u_applied >= 0.0);
        }
    }
}
