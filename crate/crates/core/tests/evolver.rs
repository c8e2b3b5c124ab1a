use std::f64::consts::PI;

use biharmonic::diagnostics::{DiagnosticsMonitor, MonitorOptions};
use biharmonic::evolver::*;
use biharmonic::geometry::TargetManifold;
use biharmonic::grid::{Field, PeriodicGrid};
use biharmonic::Error;

fn wave(grid: &PeriodicGrid, omega: f64, t: f64) -> State {
    let u = Field::from_fn(grid, 3, |x, o| {
        let th = x[0] + omega * t;
        o[0] = th.cos();
        o[1] = th.sin();
        o[2] = 0.0;
    });
    let ut = Field::from_fn(grid, 3, |x, o| {
        let th = x[0] + omega * t;
        o[0] = -omega * th.sin();
        o[1] = omega * th.cos();
        o[2] = 0.0;
    });
    State::new(u, ut, t).unwrap()
}

/// Off-equator loop with a velocity leaving the great-circle plane.
fn tilted(grid: &PeriodicGrid) -> State {
    let t = TargetManifold::unit_sphere(3);
    let u = Field::from_fn(grid, 3, |x, o| {
        let (a, b, c) = (x[0].cos(), x[0].sin(), 0.3 * (2.0 * x[0]).sin());
        let n = (a * a + b * b + c * c).sqrt();
        o.copy_from_slice(&[a / n, b / n, c / n]);
    });
    let raw = Field::from_fn(grid, 3, |x, o| {
        o.copy_from_slice(&[0.0, 0.2 * x[0].cos(), 0.4 * x[0].sin()]);
    });
    let mut ut = Field::zeros(grid, 3);
    let mut buf = [0.0; 3];
    for i in 0..grid.len() {
        t.project_into(&u.point(i), &raw.point(i), &mut buf).unwrap();
        ut.set_point(i, &buf);
    }
    State::new(u, ut, 0.0).unwrap()
}

fn great_circle_error(dt: f64) -> f64 {
    let g = PeriodicGrid::standard(1, 64).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let out = evolve(&wave(&g, 2.0, 0.0), 0.5, &EvolverConfig::new(0.0, dt, 3), &t, 1000, &mut NullSink).unwrap();
    let exact = wave(&g, 2.0, 0.5);
    out.state.u.sub(&exact.u).l2_norm() / exact.u.l2_norm()
}

#[test]
fn great_circle_error_is_second_order_in_dt() {
    let (a, b) = (great_circle_error(4e-3), great_circle_error(2e-3));
    let order = (a / b).log2();
    assert!((order - 2.0).abs() < 0.1, "errors {a:e} {b:e}, order {order}");
}

#[test]
fn step_plan_lands_on_final_time() {
    let (n, dt) = step_plan(PI, 1e-3);
    assert_eq!(n, 3142);
    assert!((n as f64 * dt - PI).abs() < 1e-14);
    assert_eq!(step_plan(1.0, 0.25), (4, 0.25));
    assert_eq!(step_plan(0.0, 0.1).0, 0);
}

#[test]
fn evolution_observes_strided_and_final_steps() {
    struct Steps(Vec<usize>);
    impl DiagnosticsSink for Steps {
        fn observe(&mut self, step: usize, _: &State) -> biharmonic::Result<()> {
            self.0.push(step);
            Ok(())
        }
    }
    let g = PeriodicGrid::standard(1, 16).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let mut sink = Steps(Vec::new());
    let out = evolve(&wave(&g, 2.0, 0.0), 0.11, &EvolverConfig::new(0.0, 0.01, 3), &t, 4, &mut sink).unwrap();
    assert!(out.completed());
    assert_eq!(sink.0, vec![0, 4, 8, 11]);
    assert!((out.state.t - 0.11).abs() < 1e-15);
}

#[test]
fn split_range_matches_single_evolution() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let s = tilted(&g);
    let cfg = EvolverConfig::new(0.2, 5e-3, 3);
    let whole = evolve(&s, 0.1, &cfg, &t, 1, &mut NullSink).unwrap();
    let (n, dt) = step_plan(0.1, cfg.dt);
    let head = evolve_range(&s, &StepRange { t0: 0.0, dt, first: 0, last: 7 }, &cfg, &t, 1, &mut NullSink).unwrap();
    let tail =
        evolve_range(&head.state, &StepRange { t0: 0.0, dt, first: 7, last: n }, &cfg, &t, 1, &mut NullSink).unwrap();
    assert_eq!(tail.state, whole.state);
    assert_eq!(tail.steps, n);
}

#[test]
fn flat_target_linear_evolution_is_exact_for_any_step() {
    let g = PeriodicGrid::standard(1, 16).unwrap();
    let t = TargetManifold::flat(1);
    let exact = |time: f64| {
        // u = cos(3x) cos(9t) solves u_tt + Δ²u = 0
        let u = Field::from_fn(&g, 1, |x, o| o[0] = (3.0 * x[0]).cos() * (9.0 * time).cos());
        let v = Field::from_fn(&g, 1, |x, o| o[0] = -9.0 * (3.0 * x[0]).cos() * (9.0 * time).sin());
        State::new(u, v, time).unwrap()
    };
    for dt in [1e-3, 0.1, 0.7] {
        let out = evolve(&exact(0.0), 2.1, &EvolverConfig::new(0.0, dt, 3), &t, 1000, &mut NullSink).unwrap();
        let e = exact(out.state.t);
        assert!(out.state.u.max_abs_diff(&e.u) < 1e-12, "dt {dt}");
        assert!(out.state.u_t.max_abs_diff(&e.u_t) < 1e-11, "dt {dt}");
    }
}

#[test]
fn viscosity_damps_flat_modes_at_the_exact_rate() {
    let g = PeriodicGrid::standard(1, 16).unwrap();
    let t = TargetManifold::flat(1);
    let eps = 0.5;
    let u0 = Field::from_fn(&g, 1, |x, o| o[0] = (2.0 * x[0]).sin());
    let s = State::new(u0.clone(), Field::zeros(&g, 1), 0.0).unwrap();
    let out = evolve(&s, 1.0, &EvolverConfig::new(eps, 0.05, 3), &t, 100, &mut NullSink).unwrap();
    // single mode: a'' + eps μ a' + μ a = 0 with μ = 16
    let (mu, time) = (16.0_f64, 1.0);
    let gamma = 0.5 * eps * mu;
    let w = (mu - gamma * gamma).sqrt();
    let a = (-gamma * time).exp() * ((w * time).cos() + gamma / w * (w * time).sin());
    assert!(out.state.u.max_abs_diff(&u0.scaled(a)) < 1e-12);
}

#[test]
fn renormalized_run_stays_on_sphere() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let mut cfg = EvolverConfig::new(0.0, 5e-3, 3);
    cfg.renormalize = Renormalize::ProjectEveryStep;
    let out = evolve(&tilted(&g), 0.2, &cfg, &t, 100, &mut NullSink).unwrap();
    for i in 0..g.len() {
        assert!(t.distance(&out.state.u.point(i)) < 1e-14);
        let (p, v) = (out.state.u.point(i), out.state.u_t.point(i));
        assert!(biharmonic::geometry::dot(&p, &v).abs() < 1e-14);
    }
}

#[test]
fn lie_splitting_is_first_order() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let s = tilted(&g);
    let reference = evolve(&s, 0.05, &EvolverConfig::new(0.0, 1e-5, 3), &t, 10_000, &mut NullSink).unwrap().state;
    let err = |dt: f64| {
        let mut cfg = EvolverConfig::new(0.0, dt, 3);
        cfg.scheme = SplittingScheme::LieSplit;
        let out = evolve(&s, 0.05, &cfg, &t, 10_000, &mut NullSink).unwrap().state;
        out.u.max_abs_diff(&reference.u)
    };
    let ratio = err(1e-3) / err(5e-4);
    assert!(ratio > 1.7 && ratio < 2.4, "{ratio}");
}

#[test]
fn energy_is_conserved_to_second_order() {
    let g = PeriodicGrid::standard(1, 64).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let drift = |dt: f64| {
        let mut m = DiagnosticsMonitor::new(&t, MonitorOptions { k: 3, epsilon: 0.0, energy_equality: None });
        evolve(&wave(&g, 2.0, 0.0), 0.5, &EvolverConfig::new(0.0, dt, 3), &t, 50, &mut m).unwrap();
        let e0 = m.records[0].energy;
        m.records.iter().map(|r| (r.energy - e0).abs() / e0).fold(0.0, f64::max)
    };
    let ratio = drift(4e-3) / drift(2e-3);
    assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
}

#[test]
fn oversized_step_aborts_with_last_good_state() {
    let g = PeriodicGrid::standard(1, 64).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let s = tilted(&g);
    let dt = 50.0 * default_time_step(&s.u).unwrap();
    let out = evolve(&s, 3.0, &EvolverConfig::new(0.0, dt, 3), &t, 1, &mut NullSink).unwrap();
    assert!(!out.completed());
    assert!(matches!(out.abort, Some(Error::ConstraintEscape { .. }) | Some(Error::NonFinite { .. })));
    assert!(out.state.is_finite());
    let limit = t.tube_width().unwrap();
    assert!((0..g.len()).all(|i| t.distance(&out.state.u.point(i)) < limit));
}

#[test]
fn invalid_configs_are_rejected() {
    let g = PeriodicGrid::standard(1, 16).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let s = wave(&g, 2.0, 0.0);
    for cfg in [EvolverConfig::new(1.0, 0.01, 3), EvolverConfig::new(0.0, -0.01, 3), EvolverConfig::new(0.0, 0.01, 2)] {
        assert!(evolve(&s, 0.1, &cfg, &t, 1, &mut NullSink).is_err());
    }
    assert!(matches!(
        evolve(&s, 0.1, &EvolverConfig::new(0.0, 0.01, 3), &TargetManifold::unit_sphere(4), 1, &mut NullSink),
        Err(Error::ShapeMismatch(_))
    ));
}
