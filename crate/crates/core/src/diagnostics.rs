//! Monitored quantities along a trajectory.
//!
//! Time integrals (dissipation, blow-up integrand, nonlinear work) are
//! accumulated with the trapezoid rule over the recorded states, so their
//! accuracy follows the record stride.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolver::{DiagnosticsSink, State};
use crate::geometry::{norm, TargetManifold};
use crate::grid::{Field, MultiIndex};
use crate::nonlinearity::Nonlinearity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub dissipation_residual: f64,
    pub alpha: f64,
    pub sup_grad: f64,
    pub sup_ut: f64,
    pub blowup_integrand: f64,
    pub blowup_integral: f64,
    pub manifold_dist: f64,
    pub tangency: f64,
    /// `None` when the monitor runs without the nonlinear work term.
    pub energy_equality_residual: Option<f64>,
    /// `‖u − u₀‖_{H^k}` against the first observed state.
    pub offset_hk: f64,
    /// `‖∇u‖_{H^s}` for `s = 0..=k−1`.
    pub grad_u_sobolev: Vec<f64>,
    /// `‖u_t‖_{H^s}` for `s = 0..=k−2`.
    pub u_t_sobolev: Vec<f64>,
}

impl DiagnosticsRecord {
    pub fn csv_header(k: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "step",
            "t",
            "energy",
            "dissipation_residual",
            "alpha",
            "sup_grad",
            "sup_ut",
            "blowup_integrand",
            "blowup_integral",
            "manifold_dist",
            "tangency",
            "energy_equality_residual",
            "offset_hk",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend((0..k).map(|s| format!("grad_u_h{s}")));
        h.extend((0..k.saturating_sub(1)).map(|s| format!("u_t_h{s}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.step.to_string()];
        let eer = self.energy_equality_residual.map(|x| x.to_string()).unwrap_or_default();
        r.extend(
            [
                self.t,
                self.energy,
                self.dissipation_residual,
                self.alpha,
                self.sup_grad,
                self.sup_ut,
                self.blowup_integrand,
                self.blowup_integral,
                self.manifold_dist,
                self.tangency,
            ]
            .iter()
            .map(|x| x.to_string()),
        );
        r.push(eer);
        r.push(self.offset_hk.to_string());
        r.extend(self.grad_u_sobolev.iter().chain(&self.u_t_sobolev).map(|x| x.to_string()));
        r
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.energy,
            self.dissipation_residual,
            self.alpha,
            self.blowup_integral,
            self.manifold_dist,
            self.tangency,
            self.offset_hk,
        ]
        .iter()
        .all(|x| x.is_finite())
            && self.energy_equality_residual.is_none_or(f64::is_finite)
    }
}

/// `½ (‖u_t‖² + ‖Δu‖²)`.
pub fn energy(state: &State) -> f64 {
    0.5 * (state.u_t.grad_power_norm_sq(0) + state.u.grad_power_norm_sq(2))
}

/// `‖∇u‖² + ‖Δu‖² + ‖∇^k u‖² + ‖u_t‖² + ‖∇^{k−2}u_t‖²`.
pub fn higher_energy(state: &State, k: usize) -> Result<f64> {
    check_order(state, k)?;
    let (u, v) = (&state.u, &state.u_t);
    Ok(u.grad_power_norm_sq(1)
        + u.grad_power_norm_sq(2)
        + u.grad_power_norm_sq(k)
        + v.grad_power_norm_sq(0)
        + v.grad_power_norm_sq(k - 2))
}

fn check_order(state: &State, k: usize) -> Result<()> {
    let max = state.grid().max_order();
    if k < 2 {
        return Err(Error::Config(format!("regularity index must be at least 2, got {k}")));
    }
    if k > max {
        return Err(Error::OrderTooHigh { order: k, max });
    }
    Ok(())
}

/// Sup over the grid of the pointwise Frobenius norm of `∇u`.
pub fn sup_gradient(u: &Field) -> Result<f64> {
    let g = &u.grid;
    let mut sq = vec![0.0; g.len()];
    for a in 0..g.dim() {
        let d = u.derivative(&MultiIndex::axis(a, 1))?;
        for c in &d.comps {
            for (s, x) in sq.iter_mut().zip(c) {
                *s += x * x;
            }
        }
    }
    Ok(sq.into_iter().fold(0.0, f64::max).sqrt())
}

/// `‖∇u‖_∞^{2k} + ‖u_t‖_∞^{2k}`.
pub fn blowup_integrand(state: &State, k: usize) -> Result<f64> {
    let e = 2 * k as i32;
    Ok(sup_gradient(&state.u)?.powi(e) + state.u_t.sup_norm().powi(e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintReport {
    pub manifold_dist: f64,
    pub tangency: f64,
}

/// Sup of `dist(u, N)` and of `|(I − P_u) u_t|`.
pub fn constraint_report(state: &State, target: &TargetManifold) -> Result<ConstraintReport> {
    let l = state.u.num_components();
    let (mut p, mut v, mut out) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    let (mut dist, mut tan): (f64, f64) = (0.0, 0.0);
    for i in 0..state.u.len() {
        state.u.point_into(i, &mut p);
        state.u_t.point_into(i, &mut v);
        dist = dist.max(target.distance(&p));
        target.normal_part_into(&p, &v, &mut out)?;
        tan = tan.max(norm(&out));
    }
    Ok(ConstraintReport { manifold_dist: dist, tangency: tan })
}

/// What the monitor evaluates besides the cheap quantities.
#[derive(Debug, Clone)]
pub struct MonitorOptions {
    pub k: usize,
    pub epsilon: f64,
    /// Evaluate the nonlinearity at every record for the energy-equality residual.
    pub energy_equality: Option<Nonlinearity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Integrands {
    t: f64,
    viscous: f64,
    blowup: f64,
    work: f64,
}

/// Incremental diagnostics over observed states; usable as an evolver sink.
pub struct DiagnosticsMonitor {
    target: TargetManifold,
    options: MonitorOptions,
    initial: Option<(State, f64, f64)>,
    prev: Option<Integrands>,
    dissipated: f64,
    blowup_integral: f64,
    work: f64,
    pub records: Vec<DiagnosticsRecord>,
    csv: Option<csv::Writer<Box<dyn Write + Send>>>,
}

/// Accumulated monitor state, enough to continue a trajectory from a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorProgress {
    initial_energy: f64,
    initial_level: f64,
    prev: Option<Integrands>,
    dissipated: f64,
    blowup_integral: f64,
    work: f64,
}

impl DiagnosticsMonitor {
    /// Initial state and accumulators, once at least one record exists.
    pub fn progress(&self) -> Option<(&State, MonitorProgress)> {
        let (s, e0, l0) = self.initial.as_ref()?;
        Some((
            s,
            MonitorProgress {
                initial_energy: *e0,
                initial_level: *l0,
                prev: self.prev,
                dissipated: self.dissipated,
                blowup_integral: self.blowup_integral,
                work: self.work,
            },
        ))
    }

    pub fn resume(
        target: &TargetManifold,
        options: MonitorOptions,
        initial: State,
        progress: MonitorProgress,
    ) -> Self {
        let mut m = Self::new(target, options);
        m.initial = Some((initial, progress.initial_energy, progress.initial_level));
        m.prev = progress.prev;
        m.dissipated = progress.dissipated;
        m.blowup_integral = progress.blowup_integral;
        m.work = progress.work;
        m
    }

    pub fn new(target: &TargetManifold, options: MonitorOptions) -> Self {
        Self {
            target: *target,
            options,
            initial: None,
            prev: None,
            dissipated: 0.0,
            blowup_integral: 0.0,
            work: 0.0,
            records: Vec::new(),
            csv: None,
        }
    }

    /// Stream every record as a CSV row to `out`.
    pub fn with_csv(mut self, out: Box<dyn Write + Send>) -> Result<Self> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(DiagnosticsRecord::csv_header(self.options.k)).map_err(csv_error)?;
        self.csv = Some(w);
        Ok(self)
    }

    pub fn finish(&mut self) -> Result<()> {
        if let Some(w) = &mut self.csv {
            w.flush()?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&DiagnosticsRecord> {
        self.records.last()
    }

    pub fn record(&mut self, step: usize, state: &State) -> Result<&DiagnosticsRecord> {
        let k = self.options.k;
        check_order(state, k)?;
        let eps = self.options.epsilon;
        let (u, v) = (&state.u, &state.u_t);

        let e = energy(state);
        let level = u.grad_power_norm_sq(k) + v.grad_power_norm_sq(k - 2);
        let work_now = match &self.options.energy_equality {
            Some(nl) => {
                let n = nl.regularized(u, v, eps)?;
                2.0 * n.grad_power_inner(v, k - 2) - 2.0 * eps * v.grad_power_norm_sq(k - 1)
            }
            None => 0.0,
        };
        let now = Integrands {
            t: state.t,
            viscous: v.grad_power_norm_sq(1),
            blowup: blowup_integrand(state, k)?,
            work: work_now,
        };
        if let Some(prev) = self.prev {
            let h = 0.5 * (now.t - prev.t);
            self.dissipated += h * (prev.viscous + now.viscous);
            self.blowup_integral += h * (prev.blowup + now.blowup);
            self.work += h * (prev.work + now.work);
        }
        self.prev = Some(now);
        let (u0, e0, level0) = match &self.initial {
            Some((s, e0, l0)) => (&s.u, *e0, *l0),
            None => {
                self.initial = Some((state.clone(), e, level));
                (u, e, level)
            }
        };
        let offset_hk = u.sub(u0).sobolev_norm(k as f64);
        let constraint = constraint_report(state, &self.target)?;
        let record = DiagnosticsRecord {
            step,
            t: state.t,
            energy: e,
            dissipation_residual: (e + eps * self.dissipated - e0).abs(),
            alpha: higher_energy(state, k)?,
            sup_grad: sup_gradient(u)?,
            sup_ut: v.sup_norm(),
            blowup_integrand: now.blowup,
            blowup_integral: self.blowup_integral,
            manifold_dist: constraint.manifold_dist,
            tangency: constraint.tangency,
            energy_equality_residual: self
                .options
                .energy_equality
                .as_ref()
                .map(|_| (level - level0 - self.work).abs()),
            offset_hk,
            grad_u_sobolev: (0..k).map(|s| u.gradient_sobolev_norm(s as f64)).collect(),
            u_t_sobolev: (0..k - 1).map(|s| v.sobolev_norm(s as f64)).collect(),
        };
        if let Some(w) = &mut self.csv {
            w.write_record(record.csv_row()).map_err(csv_error)?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }
}

impl DiagnosticsSink for DiagnosticsMonitor {
    fn observe(&mut self, step: usize, state: &State) -> Result<()> {
        self.record(step, state).map(|_| ())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn run_monitor(
    trajectory: &[State],
    target: &TargetManifold,
    options: MonitorOptions,
) -> Result<DiagnosticsMonitor> {
    let mut m = DiagnosticsMonitor::new(target, options);
    for (i, s) in trajectory.iter().enumerate() {
        m.record(i, s)?;
    }
    Ok(m)
}

/// `|E(t) + ε∫₀ᵗ‖∇u_t‖² − E(0)|` at the last state of the trajectory.
pub fn dissipation_residual(trajectory: &[State], epsilon: f64) -> Result<f64> {
    let Some(first) = trajectory.first() else { return Ok(0.0) };
    let l = first.u.num_components();
    let target = TargetManifold::flat(l);
    let k = crate::evolver::default_regularity(first.grid().dim());
    let m = run_monitor(trajectory, &target, MonitorOptions { k, epsilon, energy_equality: None })?;
    Ok(m.last().map_or(0.0, |r| r.dissipation_residual))
}

/// `∫₀ᵀ (‖∇u‖_∞^{2k} + ‖u_t‖_∞^{2k}) dt` by the trapezoid rule.
pub fn blowup_report(trajectory: &[State], k: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in trajectory {
        let f = blowup_integrand(s, k)?;
        if let Some((t0, f0)) = prev {
            total += 0.5 * (s.t - t0) * (f0 + f);
        }
        prev = Some((s.t, f));
    }
    Ok(total)
}

/// Residual of `‖∇^k u‖² + ‖∇^{k−2}u_t‖² = data + 2∫⟨∇^{k−2}N_ε, ∇^{k−2}u_t⟩ − 2ε∫‖∇^{k−1}u_t‖²`
/// at the last state of the trajectory.
pub fn energy_equality_residual(
    trajectory: &[State],
    k: usize,
    target: &TargetManifold,
    epsilon: f64,
    dealias_factor: f64,
) -> Result<f64> {
    let Some(first) = trajectory.first() else { return Ok(0.0) };
    let nl = Nonlinearity::new(target, first.grid(), dealias_factor)?;
    let m = run_monitor(
        trajectory,
        target,
        MonitorOptions { k, epsilon, energy_equality: Some(nl) },
    )?;
    Ok(m.last().and_then(|r| r.energy_equality_residual).unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use std::f64::consts::PI;

    fn great_circle(grid: &PeriodicGrid, omega: f64) -> State {
        let u = Field::from_fn(grid, 3, |x, o| {
            o[0] = x[0].cos();
            o[1] = x[0].sin();
            o[2] = 0.0;
        });
        let ut = Field::from_fn(grid, 3, |x, o| {
            o[0] = -omega * x[0].sin();
            o[1] = omega * x[0].cos();
            o[2] = 0.0;
        });
        State::new(u, ut, 0.0).unwrap()
    }

    #[test]
    fn energy_examples() {
        let g = PeriodicGrid::standard(1, 32).unwrap();
        let c = Field::constant(&g, &[0.0, 0.0, 1.0]);
        let s = State::new(c.clone(), Field::zeros(&g, 3), 0.0).unwrap();
        assert_eq!(energy(&s), 0.0);
        assert!((energy(&great_circle(&g, 2.0)) - 5.0 * PI).abs() < 1e-12);
        assert!((energy(&great_circle(&g, 0.0)) - PI).abs() < 1e-12);
    }

    #[test]
    fn higher_energy_examples() {
        let g = PeriodicGrid::standard(1, 32).unwrap();
        let a = higher_energy(&great_circle(&g, 2.0), 4).unwrap();
        assert!((a - 22.0 * PI).abs() < 1e-10);
        let sin = Field::from_fn(&g, 1, |x, o| o[0] = x[0].sin());
        let s = State::new(Field::zeros(&g, 1), sin, 0.0).unwrap();
        assert!((higher_energy(&s, 4).unwrap() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn frozen_great_circle_blowup_integral() {
        let g = PeriodicGrid::standard(1, 32).unwrap();
        let s0 = great_circle(&g, 2.0);
        let mut s1 = s0.clone();
        s1.t = 1.0;
        let b = blowup_report(&[s0, s1], 3).unwrap();
        assert!((b - 65.0).abs() < 1e-9, "{b}");
    }

    #[test]
    fn constraint_examples() {
        let g = PeriodicGrid::standard(1, 32).unwrap();
        let t = TargetManifold::unit_sphere(3);
        let s = great_circle(&g, 2.0);
        let r = constraint_report(&s, &t).unwrap();
        assert!(r.manifold_dist < 1e-15 && r.tangency < 1e-14);
        let scaled = State::new(s.u.scaled(1.01), s.u_t.clone(), 0.0).unwrap();
        let r = constraint_report(&scaled, &t).unwrap();
        assert!((r.manifold_dist - 0.01).abs() < 1e-14);
    }

    #[test]
    fn constant_trajectory_has_zero_residuals() {
        let g = PeriodicGrid::standard(1, 16).unwrap();
        let t = TargetManifold::unit_sphere(3);
        let c = State::new(Field::constant(&g, &[1.0, 0.0, 0.0]), Field::zeros(&g, 3), 0.0).unwrap();
        let mut c1 = c.clone();
        c1.t = 0.5;
        let traj = [c, c1];
        assert_eq!(dissipation_residual(&traj, 0.3).unwrap(), 0.0);
        assert_eq!(blowup_report(&traj, 3).unwrap(), 0.0);
        assert_eq!(energy_equality_residual(&traj, 3, &t, 0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn csv_header_matches_row_width() {
        let g = PeriodicGrid::standard(1, 16).unwrap();
        let t = TargetManifold::unit_sphere(3);
        let mut m = DiagnosticsMonitor::new(&t, MonitorOptions { k: 3, epsilon: 0.0, energy_equality: None });
        let r = m.record(0, &great_circle(&g, 1.0)).unwrap().clone();
        assert_eq!(r.csv_row().len(), DiagnosticsRecord::csv_header(3).len());
        assert!(r.is_finite());
    }
}
