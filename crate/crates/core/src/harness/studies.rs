//! Multi-run experiments: viscosity sweep, mollification rates, continuity of
//! the flow, and manufactured-solution convergence.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{InitialKind, RunConfig};
use super::initial::{great_circle_state, mollify_initial_data, project_data, random_band_limited};
use super::run::{prepare, simulate, Prepared, Simulation, SimulationOptions};
use crate::error::{Error, Result};
use crate::evolver::State;
use crate::grid::Field;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn run_members(members: &[Prepared], workers: usize) -> Result<Vec<Simulation>> {
    let sims: Vec<Result<Simulation>> = pool(workers)?.install(|| {
        members
            .par_iter()
            .map(|p| simulate(p, SimulationOptions { keep_states: true, ..Default::default() }))
            .collect()
    });
    sims.into_iter()
        .map(|s| {
            let s = s?;
            match s.abort {
                Some(e) => Err(e),
                None => Ok(s),
            }
        })
        .collect()
}

fn sup_over_records(a: &Simulation, b: &Simulation, dist: impl Fn(&State, &State) -> f64) -> f64 {
    a.states.iter().zip(&b.states).map(|(x, y)| dist(x, y)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ViscosityReport {
    pub epsilons: Vec<f64>,
    /// `(ε_i, ε_{i+1}, sup_t ‖u^{ε_i} − u^{ε_{i+1}}‖_{H²} + ‖u_t^{ε_i} − u_t^{ε_{i+1}}‖_{L²})`
    pub pairs: Vec<(f64, f64, f64)>,
    /// `(ε, same distance to the ε = 0 run)`
    pub to_inviscid: Vec<(f64, f64)>,
}

impl fmt::Display for ViscosityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>10} {:>14}", "eps", "eps'", "distance")?;
        for (a, b, d) in &self.pairs {
            writeln!(f, "{a:>10} {b:>10} {d:>14.6e}")?;
        }
        for (a, d) in &self.to_inviscid {
            writeln!(f, "{a:>10} {:>10} {d:>14.6e}", 0)?;
        }
        Ok(())
    }
}

fn h2_l2(a: &State, b: &State) -> f64 {
    a.u.sub(&b.u).sobolev_norm(2.0) + a.u_t.sub(&b.u_t).l2_norm()
}

/// Same data and step for every viscosity in `epsilons`, plus the inviscid run.
pub fn sweep_viscosity(config: &RunConfig, epsilons: &[f64]) -> Result<ViscosityReport> {
    let base = prepare(config)?;
    let mut members = Vec::with_capacity(epsilons.len() + 1);
    for &eps in epsilons.iter().chain(std::iter::once(&0.0)) {
        let mut p = base.clone();
        p.evolver.epsilon = eps;
        p.evolver.validate(&p.grid)?;
        p.config.evolver.epsilon = eps;
        members.push(p);
    }
    let sims = run_members(&members, config.study.workers)?;
    let (inviscid, viscous) = sims.split_last().expect("at least the inviscid run");
    let pairs = epsilons
        .windows(2)
        .zip(viscous.windows(2))
        .map(|(e, s)| (e[0], e[1], sup_over_records(&s[0], &s[1], h2_l2)))
        .collect();
    let to_inviscid = epsilons.iter().zip(viscous).map(|(&e, s)| (e, sup_over_records(s, inviscid, h2_l2))).collect();
    Ok(ViscosityReport { epsilons: epsilons.to_vec(), pairs, to_inviscid })
}

#[derive(Debug, Clone, Serialize)]
pub struct BonaSmithRow {
    pub delta: f64,
    /// `‖u₀ − u₀^δ‖_{L²} / δ`
    pub r1: f64,
    /// `‖(∇u₀^δ − ∇u₀, u₁^δ − u₁)‖_{H^{k−2}×H^{k−3}} / √δ`
    pub r2: f64,
    /// `‖(∇u₀^δ − ∇u₀, u₁^δ − u₁)‖_{H^{k−1}×H^{k−2}}`
    pub r3: f64,
    /// `√δ ‖(∇u₀^δ, u₁^δ)‖_{H^k×H^{k−1}}`
    pub r4: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BonaSmithReport {
    pub k: usize,
    pub rows: Vec<BonaSmithRow>,
}

impl fmt::Display for BonaSmithReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "{:>12} {:>14} {:>14} {:>14} {:>14}", "delta", "r1", "r2", "r3", "r4")?;
        for r in &self.rows {
            writeln!(f, "{:>12.4e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}", r.delta, r.r1, r.r2, r.r3, r.r4)?;
        }
        Ok(())
    }
}

fn pair_norm(u: &Field, s_u: usize, v: &Field, s_v: usize) -> f64 {
    let a = u.gradient_sobolev_norm(s_u as f64);
    let b = v.sobolev_norm(s_v as f64);
    (a * a + b * b).sqrt()
}

/// Mollification rates of the initial data for each `δ`.
pub fn bona_smith_study(config: &RunConfig, deltas: &[f64], k: usize) -> Result<BonaSmithReport> {
    if k < 3 {
        return Err(Error::Config(format!("bona-smith needs k >= 3, got {k}")));
    }
    let p = prepare(config)?;
    let s = &p.initial;
    let rows: Vec<Result<BonaSmithRow>> = pool(config.study.workers)?.install(|| {
        deltas
            .par_iter()
            .map(|&delta| {
                if !(delta > 0.0) {
                    return Err(Error::NegativeDelta(delta));
                }
                let m = mollify_initial_data(s, delta, &p.target)?;
                let du = m.u.sub(&s.u);
                let dv = m.u_t.sub(&s.u_t);
                Ok(BonaSmithRow {
                    delta,
                    r1: du.l2_norm() / delta,
                    r2: pair_norm(&du, k - 2, &dv, k - 3) / delta.sqrt(),
                    r3: pair_norm(&du, k - 1, &dv, k - 2),
                    r4: delta.sqrt() * pair_norm(&m.u, k, &m.u_t, k - 1),
                })
            })
            .collect()
    });
    Ok(BonaSmithReport { k, rows: rows.into_iter().collect::<Result<_>>()? })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub k: usize,
    /// `(R, sup_t ‖u − v‖_{H^k} + ‖u_t − v_t‖_{H^{k−2}})`
    pub rows: Vec<(f64, f64)>,
}

impl fmt::Display for ContinuityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "{:>12} {:>14}", "R", "distance")?;
        for (r, d) in &self.rows {
            writeln!(f, "{r:>12.4e} {d:>14.6e}")?;
        }
        Ok(())
    }
}

/// Unit tangent direction `(w_u, w_v)` with `‖w_u‖_{H^k} + ‖w_v‖_{H^{k−2}} = 1`, fixed by `seed`.
pub fn perturbation_direction(p: &Prepared, k: usize, seed: u64) -> Result<(Field, Field)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = p.target.ambient_dim();
    let raw_u = random_band_limited(&p.grid, l, 3, 1.0, &mut rng);
    let raw_v = random_band_limited(&p.grid, l, 3, 1.0, &mut rng);
    let mut wu = Field::zeros(&p.grid, l);
    let mut wv = Field::zeros(&p.grid, l);
    let mut out = vec![0.0; l];
    for i in 0..p.grid.len() {
        let u = p.initial.u.point(i);
        p.target.project_into(&u, &raw_u.point(i), &mut out)?;
        wu.set_point(i, &out);
        p.target.project_into(&u, &raw_v.point(i), &mut out)?;
        wv.set_point(i, &out);
    }
    let size = wu.sobolev_norm(k as f64) + wv.sobolev_norm(k as f64 - 2.0);
    Ok((wu.scaled(1.0 / size), wv.scaled(1.0 / size)))
}

/// Distance between the base run and runs from data perturbed by `R` along one fixed direction.
pub fn continuity_study(config: &RunConfig, radii: &[f64], k: usize) -> Result<ContinuityReport> {
    let base = prepare(config)?;
    if k < 2 || k > base.grid.max_order() {
        return Err(Error::Config(format!("continuity needs 2 <= k <= {}", base.grid.max_order())));
    }
    let (wu, wv) = perturbation_direction(&base, k, config.seed ^ 0x5eed_c0de)?;
    let mut members = vec![base.clone()];
    for &r in radii {
        let mut p = base.clone();
        if r == 0.0 {
            members.push(p);
            continue;
        }
        p.initial = project_data(&p.target, &base.initial.u.axpy(r, &wu), &base.initial.u_t.axpy(r, &wv), base.initial.t)?;
        members.push(p);
    }
    let sims = run_members(&members, config.study.workers)?;
    let dist = |a: &State, b: &State| a.u.sub(&b.u).sobolev_norm(k as f64) + a.u_t.sub(&b.u_t).sobolev_norm(k as f64 - 2.0);
    let rows = radii.iter().zip(&sims[1..]).map(|(&r, s)| (r, sup_over_records(&sims[0], s, dist))).collect();
    Ok(ContinuityReport { k, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub points: usize,
    pub dts: Vec<f64>,
    /// Relative L² error of `u` at the final time for each step.
    pub temporal_errors: Vec<f64>,
    /// `log₂` of consecutive error ratios.
    pub temporal_orders: Vec<f64>,
    /// `(points, error)` at the coarsest step for `M` and `2M`.
    pub spatial_errors: Vec<(usize, f64)>,
}

impl ConvergenceReport {
    pub fn min_order(&self) -> f64 {
        self.temporal_orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>14} {:>8}", "dt", "rel L2 error", "order")?;
        for (i, (dt, e)) in self.dts.iter().zip(&self.temporal_errors).enumerate() {
            let order = if i == 0 { String::from("-") } else { format!("{:.3}", self.temporal_orders[i - 1]) };
            writeln!(f, "{dt:>12.4e} {e:>14.6e} {order:>8}")?;
        }
        for (m, e) in &self.spatial_errors {
            writeln!(f, "M = {m:<6} {e:>14.6e}")?;
        }
        Ok(())
    }
}

/// Error against the exact great-circle wave at `(dt, dt/2, dt/4)` and at `(M, 2M)`.
pub fn convergence_study(config: &RunConfig) -> Result<ConvergenceReport> {
    let InitialKind::GreatCircle { wave, omega, phase } = &config.initial.kind else {
        return Err(Error::Config("convergence study needs great_circle initial data".into()));
    };
    if config.initial.bump.is_some() {
        return Err(Error::Config("convergence study needs unperturbed data".into()));
    }
    if config.evolver.epsilon != 0.0 {
        return Err(Error::Config("convergence study runs at epsilon = 0".into()));
    }
    let base = prepare(config)?;
    if base.target.is_flat() {
        let a2: f64 = wave.iter().map(|&k| (k * k) as f64).sum();
        if (omega.abs() - a2).abs() > 1e-12 {
            return Err(Error::Config("flat-target waves need |omega| = |a|^2".into()));
        }
    }
    let dt = base.evolver.dt;
    let mut members = Vec::new();
    for div in [1.0, 2.0, 4.0] {
        let mut p = base.clone();
        p.evolver.dt = dt / div;
        p.config.evolver.dt = Some(dt / div);
        members.push(p);
    }
    let mut fine = config.clone();
    fine.grid.points *= 2;
    fine.evolver.dt = Some(dt);
    fine.evolver.dt_scale = 1.0;
    members.push(prepare(&fine)?);
    let sims = run_members(&members, config.study.workers)?;
    let errors: Vec<f64> = members
        .iter()
        .zip(&sims)
        .map(|(p, s)| {
            let exact = great_circle_state(&p.grid, &p.target, wave, *omega, *phase, s.final_state.t)?;
            Ok(s.final_state.u.sub(&exact.u).l2_norm() / exact.u.l2_norm())
        })
        .collect::<Result<_>>()?;
    let temporal_errors = errors[..3].to_vec();
    let temporal_orders = temporal_errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(ConvergenceReport {
        points: base.grid.points(),
        dts: vec![dt, dt / 2.0, dt / 4.0],
        temporal_errors,
        temporal_orders,
        spatial_errors: vec![(base.grid.points(), errors[0]), (2 * base.grid.points(), errors[3])],
    })
}
