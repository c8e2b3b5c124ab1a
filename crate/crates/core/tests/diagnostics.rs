use std::f64::consts::PI;

use biharmonic::diagnostics::*;
use biharmonic::evolver::{evolve, EvolverConfig, State};
use biharmonic::geometry::TargetManifold;
use biharmonic::grid::{Field, PeriodicGrid};
use biharmonic::harness::initial::great_circle_state;

struct Keep(Vec<State>);

impl biharmonic::evolver::DiagnosticsSink for Keep {
    fn observe(&mut self, _: usize, state: &State) -> biharmonic::Result<()> {
        self.0.push(state.clone());
        Ok(())
    }
}

#[test]
fn great_circle_quantities_are_exact() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let s = great_circle_state(&g, &t, &[1], 2.0, 0.0, 0.0).unwrap();
    assert!((energy(&s) - 5.0 * PI).abs() < 1e-12);
    // |∇u| = 1, |u_t| = 2 everywhere
    assert!((blowup_integrand(&s, 3).unwrap() - (1.0 + 64.0)).abs() < 1e-9);
    let c = constraint_report(&s, &t).unwrap();
    assert!(c.manifold_dist < 1e-15 && c.tangency < 1e-15);
    // ‖∇u‖² + ‖Δu‖² + ‖∇³u‖² + ‖u_t‖² + ‖∇u_t‖² = 2π(1 + 1 + 1 + 4 + 4)
    assert!((higher_energy(&s, 3).unwrap() - 22.0 * PI).abs() < 1e-10);
}

#[test]
fn blowup_report_integrates_constant_integrand() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let traj: Vec<State> = (0..=4).map(|i| great_circle_state(&g, &t, &[1], 2.0, 0.0, 0.25 * i as f64).unwrap()).collect();
    assert!((blowup_report(&traj, 3).unwrap() - 65.0).abs() < 1e-8);
    assert_eq!(blowup_report(&traj[..1], 3).unwrap(), 0.0);
}

#[test]
fn damped_flat_mode_satisfies_dissipation_identity() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::flat(1);
    let u0 = Field::from_fn(&g, 1, |x, o| o[0] = (2.0 * x[0]).cos());
    let s = State::new(u0, Field::zeros(&g, 1), 0.0).unwrap();
    let residual = |dt: f64| {
        let mut keep = Keep(Vec::new());
        evolve(&s, 0.5, &EvolverConfig::new(0.3, dt, 3), &t, 1, &mut keep).unwrap();
        dissipation_residual(&keep.0, 0.3).unwrap()
    };
    let (a, b) = (residual(1e-2), residual(5e-3));
    assert!(a < 2e-3 && a / b > 3.5, "{a:e} {b:e}");
}

#[test]
fn monitor_csv_matches_records() {
    let g = PeriodicGrid::standard(1, 32).unwrap();
    let t = TargetManifold::unit_sphere(3);
    let s = great_circle_state(&g, &t, &[1], 2.0, 0.0, 0.0).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    let out = Box::new(file.reopen().unwrap());
    let mut m = DiagnosticsMonitor::new(&t, MonitorOptions { k: 3, epsilon: 0.0, energy_equality: None })
        .with_csv(out)
        .unwrap();
    evolve(&s, 0.05, &EvolverConfig::new(0.0, 0.01, 3), &t, 2, &mut m).unwrap();
    m.finish().unwrap();
    let text = std::fs::read_to_string(file.path()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0].split(',').collect::<Vec<_>>(), DiagnosticsRecord::csv_header(3));
    assert_eq!(lines.len(), 1 + m.records.len());
    assert_eq!(lines.last().unwrap().split(',').collect::<Vec<_>>(), m.records.last().unwrap().csv_row());
    assert!(m.records.iter().all(|r| r.is_finite()));
}
