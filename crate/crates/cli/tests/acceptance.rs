//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Red criteria are reported, not hidden: the test itself fails only when a
//! criterion cannot be evaluated, or when `ACCEPTANCE_STRICT=1` and any line is FAIL.

use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::time::Instant;

use biharmonic::diagnostics::DiagnosticsRecord;
use biharmonic::evolver::{evolve, EvolverConfig, NullSink, State};
use biharmonic::geometry::TargetManifold;
use biharmonic::grid::{Field, PeriodicGrid};
use biharmonic::harness::initial::great_circle_state;
use biharmonic::harness::run::{prepare, simulate, Simulation, SimulationOptions};
use biharmonic::harness::verify::{random_manifold_data, ROUNDOFF_FLOOR};
use biharmonic::harness::*;
use biharmonic::nonlinearity::Nonlinearity;
use biharmonic::oracle;

const GREAT_CIRCLE: &str = r#"
duration = 3.141592653589793
record_stride = 10
[grid]
dim = 1
points = 128
[target]
kind = "sphere"
ambient_dim = 3
[initial]
kind = "great_circle"
omega = 2.0
[evolver]
dt = 1e-3
"#;

fn config(base: &str, overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::parse_with_overrides(base, &o).expect("valid acceptance config")
}

fn sim(cfg: &RunConfig) -> Simulation {
    let p = prepare(cfg).expect("prepare");
    let s = simulate(&p, SimulationOptions::default()).expect("simulate");
    assert!(s.abort.is_none(), "accepted run aborted: {:?}", s.abort);
    s
}

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id:>2} {name}: {detail}");
        self.lines.push((pass, format!("{id} {name}")));
    }
}

fn blowup_healthy(records: &[DiagnosticsRecord]) -> bool {
    records.iter().all(|r| r.blowup_integral.is_finite())
        && records.windows(2).all(|w| w[1].blowup_integral >= w[0].blowup_integral)
}

fn rel_l2(a: &Field, b: &Field) -> f64 {
    a.sub(b).l2_norm() / b.l2_norm()
}

fn main() {
    let mut rep = Report { lines: Vec::new() };
    let mut accepted: Vec<(String, Vec<DiagnosticsRecord>)> = Vec::new();
    let target = TargetManifold::unit_sphere(3);

    // 1. manufactured solution
    let run1_cfg = config(GREAT_CIRCLE, &[]);
    let start = Instant::now();
    let run1 = sim(&run1_cfg);
    let runtime = start.elapsed().as_secs_f64();
    let grid = PeriodicGrid::standard(1, 128).unwrap();
    let exact = great_circle_state(&grid, &target, &[1], 2.0, 0.0, run1.final_state.t).unwrap();
    let err = rel_l2(&run1.final_state.u, &exact.u);
    let conv = convergence_study(&run1_cfg).unwrap();
    let order = conv.min_order();
    rep.line(
        1,
        "manufactured solution",
        err <= 1e-5 && runtime <= 10.0 && order >= 1.8,
        format!(
            "rel L2 error {err:.3e} (<= 1e-5), runtime {runtime:.2} s (<= 10), temporal order {order:.3} (>= 1.8; errors {:.3e} {:.3e} {:.3e})",
            conv.temporal_errors[0], conv.temporal_errors[1], conv.temporal_errors[2]
        ),
    );

    // 2. energy conservation on run 1
    let e0 = run1.records[0].energy;
    let drift = run1.records.iter().map(|r| (r.energy - e0).abs() / e0).fold(0.0, f64::max);
    let e0_gap = (e0 - 5.0 * PI).abs();
    rep.line(
        2,
        "energy conservation",
        drift <= 1e-6 && e0_gap <= 1e-10,
        format!("max |E-E0|/E0 {drift:.3e} (<= 1e-6), |E(0)-5pi| {e0_gap:.1e} (<= 1e-10)"),
    );

    // 3. dissipation identity
    let mut visc = |dt: f64| {
        let cfg = config(
            GREAT_CIRCLE,
            &["evolver.epsilon=0.5", "duration=1.0", "record_stride=1", &format!("evolver.dt={dt}")],
        );
        let s = sim(&cfg);
        let r = s.records.last().unwrap().dissipation_residual;
        accepted.push((format!("eps=0.5 dt={dt}"), s.records));
        r
    };
    let (r_dt, r_half) = (visc(1e-3), visc(5e-4));
    rep.line(
        3,
        "dissipation identity",
        r_dt <= 1e-5 && r_dt >= 2.0 * r_half,
        format!("residual {r_dt:.3e} at dt=1e-3 (<= 1e-5), {r_half:.3e} at dt/2 (ratio {:.2} >= 2)", r_dt / r_half),
    );

    // 4. constraint preservation on run 1
    let dist = run1.records.iter().map(|r| r.manifold_dist).fold(0.0, f64::max);
    let tang = run1.records.iter().map(|r| r.tangency).fold(0.0, f64::max);
    rep.line(
        4,
        "constraint preservation",
        dist <= 1e-6 && tang <= 1e-6,
        format!("sup dist {dist:.3e} (<= 1e-6), sup tangency {tang:.3e} (<= 1e-6)"),
    );
    accepted.push(("run 1".into(), run1.records.clone()));

    // 5. orthogonality of the nonlinearity
    let ortho = |states: &[State]| -> Vec<f64> {
        states
            .iter()
            .map(|s| {
                let nl = Nonlinearity::new(&target, s.grid(), 2.0).unwrap();
                nl.orthogonality_residual(&s.u, &s.u_t).unwrap()
            })
            .collect()
    };
    let gc: Vec<State> = [64, 128]
        .iter()
        .map(|&m| great_circle_state(&PeriodicGrid::standard(1, m).unwrap(), &target, &[1], 2.0, 0.0, 0.0).unwrap())
        .collect();
    let (gc_res, rnd_res) = (ortho(&gc), ortho(&random_manifold_data(&target, 1, &[64, 128], 17).unwrap()));
    let decays = |r: &[f64]| r[0] <= ROUNDOFF_FLOOR || r[0] >= 4.0 * r[1];
    rep.line(
        5,
        "orthogonality of N",
        gc_res[1] <= 1e-8 && rnd_res[1] <= 1e-8 && decays(&gc_res) && decays(&rnd_res),
        format!(
            "great circle {:.2e} -> {:.2e}, random {:.2e} -> {:.2e} (M=64 -> 128; <= 1e-8, >= 4x or resolved)",
            gc_res[0], gc_res[1], rnd_res[0], rnd_res[1]
        ),
    );

    // 6. vanishing viscosity
    let sweep_cfg = config(
        GREAT_CIRCLE,
        &["duration=1.0", "grid.points=64", "initial.bump={amplitude=0.3, width=0.5}"],
    );
    let sweep = sweep_viscosity(&sweep_cfg, &[0.4, 0.2, 0.1, 0.05]).unwrap();
    let pairs_dec = sweep.pairs.windows(2).all(|w| w[1].2 < w[0].2);
    let inv_dec = sweep.to_inviscid.windows(2).all(|w| w[1].1 < w[0].1);
    rep.line(
        6,
        "vanishing viscosity",
        pairs_dec && inv_dec,
        format!(
            "pair distances {:?}, to eps=0 {:?}",
            sweep.pairs.iter().map(|p| format!("{:.3e}", p.2)).collect::<Vec<_>>(),
            sweep.to_inviscid.iter().map(|p| format!("{:.3e}", p.1)).collect::<Vec<_>>()
        ),
    );

    // 7. Bona-Smith rates
    let rb_cfg = config(
        GREAT_CIRCLE,
        &["grid.points=64", "seed=5", "initial={kind=\"random_bump\", amplitude=0.3, band=4}"],
    );
    let deltas: Vec<f64> = (4..=10).map(|j| 2f64.powi(-j)).collect();
    let bs = bona_smith_study(&rb_cfg, &deltas, 3).unwrap();
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let r1: Vec<f64> = bs.rows.iter().map(|r| r.r1).collect();
    let r2: Vec<f64> = bs.rows.iter().map(|r| r.r2).collect();
    let r4: Vec<f64> = bs.rows.iter().map(|r| r.r4).collect();
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let r1_ok = max(&r1) <= 2.0 * median(r1.clone());
    let r2_mono = r2.windows(2).all(|w| w[1] < w[0]);
    let r2_ratio = r2[r2.len() - 1] / r2[0];
    let r4_ok = max(&r4) <= 2.0 * median(r4.clone());
    rep.line(
        7,
        "Bona-Smith rates",
        r1_ok && r2_mono && r2_ratio < 0.1 && r4_ok,
        format!(
            "r1 max/median {:.2} (<= 2), r2 monotone {r2_mono}, r2(2^-10)/r2(2^-4) {r2_ratio:.3} (< 0.1), r4 max/median {:.2} (<= 2)",
            max(&r1) / median(r1.clone()),
            max(&r4) / median(r4.clone())
        ),
    );

    // 8. continuity of the flow
    let cont_cfg = config(GREAT_CIRCLE, &["duration=1.0", "grid.points=64", "seed=5"]);
    let cont = continuity_study(&cont_cfg, &[1e-2, 1e-3, 1e-4], 3).unwrap();
    let d: Vec<f64> = cont.rows.iter().map(|r| r.1).collect();
    let ratios: Vec<f64> = d.windows(2).map(|w| w[0] / w[1]).collect();
    rep.line(
        8,
        "continuity of the flow",
        ratios.iter().all(|&r| r >= 3.0),
        format!("distances {:.3e} {:.3e} {:.3e}, ratios {:.2} {:.2} (>= 3)", d[0], d[1], d[2], ratios[0], ratios[1]),
    );

    // 9. propagator exactness
    let lattice = PeriodicGrid::standard(2, 128).unwrap();
    let mut gap: f64 = 0.0;
    for eps in [0.0, 0.1, 0.5, 0.99] {
        for dt in [1e-3, 1e-2] {
            gap = gap.max(oracle::propagator_discrepancy(&grid, eps, dt).unwrap());
            gap = gap.max(oracle::propagator_discrepancy(&lattice, eps, dt).unwrap());
        }
    }
    let flat = TargetManifold::flat(2);
    let g32 = PeriodicGrid::standard(1, 32).unwrap();
    let plate = |t: f64| {
        let u = Field::from_fn(&g32, 2, |x, o| {
            o[0] = x[0].cos() * t.cos();
            o[1] = (2.0 * x[0]).sin() * (4.0 * t).cos() + (2.0 * x[0]).cos() * (4.0 * t).sin() / 4.0;
        });
        let v = Field::from_fn(&g32, 2, |x, o| {
            o[0] = -x[0].cos() * t.sin();
            o[1] = -4.0 * (2.0 * x[0]).sin() * (4.0 * t).sin() + (2.0 * x[0]).cos() * (4.0 * t).cos();
        });
        State::new(u, v, t).unwrap()
    };
    let mut plate_gap: f64 = 0.0;
    for dt in [0.013, 0.37, 1.3] {
        let out = evolve(&plate(0.0), 2.6, &EvolverConfig::new(0.0, dt, 3), &flat, 1000, &mut NullSink).unwrap();
        let e = plate(out.state.t);
        plate_gap = plate_gap.max(out.state.u.max_abs_diff(&e.u)).max(out.state.u_t.max_abs_diff(&e.u_t));
    }
    rep.line(
        9,
        "propagator exactness",
        gap <= 1e-12 && plate_gap <= 1e-10,
        format!("symbol vs dense expm {gap:.2e} (<= 1e-12), flat plate wave {plate_gap:.2e} (<= 1e-10)"),
    );

    // 10. expansion verification via the verify suite
    let v = verify(0).unwrap();
    let expansion_rows: Vec<_> =
        v.rows.iter().filter(|r| r.check.starts_with("leibniz") || r.check.starts_with("difference")).collect();
    let worst = expansion_rows
        .iter()
        .filter(|r| r.check.ends_with("M=128"))
        .map(|r| r.value)
        .fold(0.0, f64::max);
    rep.line(
        10,
        "expansion checks",
        expansion_rows.iter().all(|r| r.passed()) && v.passed() && v.seconds <= 60.0,
        format!(
            "{} expansion rows, worst residual {worst:.2e} (<= 1e-7) with decay; verify {} in {:.1} s (<= 60)",
            expansion_rows.len(),
            if v.passed() { "passed" } else { "FAILED" },
            v.seconds
        ),
    );

    // 11. blow-up monitor sanity
    let healthy = accepted.iter().all(|(_, r)| blowup_healthy(r));
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("unstable.toml");
    fs::write(
        &cfg_path,
        format!(
            "{GREAT_CIRCLE}\n[output]\ndir = \"{}\"\nname = \"unstable\"\n",
            dir.path().display()
        )
        .replace("[evolver]\ndt = 1e-3\n", "")
        .replace("record_stride = 10", "record_stride = 1")
        .replace("kind = \"great_circle\"\nomega = 2.0", "kind = \"random_bump\"\namplitude = 0.3\nband = 4"),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bwm"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--set", "evolver.dt_scale=50"])
        .output()
        .unwrap();
    let code = out.status.code();
    let csv = fs::read_to_string(dir.path().join("unstable.csv")).unwrap_or_default();
    let finite_rows = csv.lines().skip(1).all(|l| !l.contains("NaN") && !l.contains("inf"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("unstable.json")).unwrap_or_default())
            .unwrap_or(serde_json::Value::Null);
    let flagged = summary["completed"] == false && summary["abort"].is_string();
    rep.line(
        11,
        "blow-up monitor sanity",
        healthy && code == Some(3) && finite_rows && flagged,
        format!(
            "{} accepted runs finite and monotone: {healthy}; unstable run exit {code:?} (3), {} finite rows: {finite_rows}, flagged: {flagged}",
            accepted.len(),
            csv.lines().count().saturating_sub(1)
        ),
    );

    let failed: Vec<&String> = rep.lines.iter().filter(|l| !l.0).map(|l| &l.1).collect();
    println!("{} of {} criteria pass", rep.lines.len() - failed.len(), rep.lines.len());
    assert_eq!(rep.lines.len(), 11);
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") && !failed.is_empty() {
        eprintln!("red criteria: {failed:?}");
        std::process::exit(1);
    }
}
