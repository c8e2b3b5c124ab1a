//! Time stepping for `u_tt + Δ²u − εΔu_t = N_ε(u, u_t)`.
//!
//! The linear damped-plate part is diagonal in Fourier space: every
//! wavenumber carries the 2×2 system `A_ξ = [[0, 1], [−|ξ|⁴, −ε|ξ|²]]`, whose
//! exponential is applied exactly. The nonlinearity only changes the
//! velocity, so its substep keeps `u` fixed and integrates `u_t' = N_ε(u, u_t)`
//! with classical RK4.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TargetManifold;
use crate::grid::{Field, PeriodicGrid};
use crate::nonlinearity::{check_epsilon, Nonlinearity, DEFAULT_DEALIAS_FACTOR};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub u_t: Field,
    pub t: f64,
}

impl State {
    pub fn new(u: Field, u_t: Field, t: f64) -> Result<Self> {
        u.check_same_shape(&u_t)?;
        Ok(Self { u, u_t, t })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.u.grid
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.u.is_finite() && self.u_t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SplittingScheme {
    #[default]
    StrangSplit,
    LieSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Renormalize {
    #[default]
    Off,
    ProjectEveryStep,
}

/// Spectral filter applied to the velocity increment of the nonlinear substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum KickFilter {
    None,
    /// `sinc(dt |ξ|²)`, which vanishes where the linear half-steps resonate.
    #[default]
    Sinc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolverConfig {
    pub epsilon: f64,
    pub dt: f64,
    #[serde(default)]
    pub scheme: SplittingScheme,
    #[serde(default = "default_dealias")]
    pub dealias_factor: f64,
    #[serde(default)]
    pub renormalize: Renormalize,
    #[serde(default)]
    pub filter: KickFilter,
    /// Regularity index used by the diagnostics.
    pub k: usize,
}

fn default_dealias() -> f64 {
    DEFAULT_DEALIAS_FACTOR
}

impl EvolverConfig {
    pub fn new(epsilon: f64, dt: f64, k: usize) -> Self {
        Self {
            epsilon,
            dt,
            scheme: SplittingScheme::StrangSplit,
            dealias_factor: DEFAULT_DEALIAS_FACTOR,
            renormalize: Renormalize::Off,
            filter: KickFilter::Sinc,
            k,
        }
    }

    pub fn validate(&self, grid: &PeriodicGrid) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let min_k = grid.dim() / 2 + 3;
        if self.k < min_k {
            return Err(Error::Config(format!("k = {} must be at least {min_k}", self.k)));
        }
        if self.k > grid.max_order() {
            return Err(Error::OrderTooHigh { order: self.k, max: grid.max_order() });
        }
        Ok(())
    }
}

/// Smallest admissible regularity index `⌊n/2⌋ + 3`.
pub fn default_regularity(dim: usize) -> usize {
    dim / 2 + 3
}

/// `0.5 Δx min(1, 1/sup|∇u₀|)`.
pub fn default_time_step(u0: &Field) -> Result<f64> {
    let grid = &u0.grid;
    let mut sq = vec![0.0; grid.len()];
    for a in 0..grid.dim() {
        let d = u0.derivative(&crate::grid::MultiIndex::axis(a, 1))?;
        for c in &d.comps {
            for (s, x) in sq.iter_mut().zip(c) {
                *s += x * x;
            }
        }
    }
    let sup = sq.into_iter().fold(0.0, f64::max).sqrt();
    Ok(0.5 * grid.min_spacing() * (1.0 / sup.max(1.0)))
}

/// Per-wavenumber `exp(dt A_ξ)` stored row-major.
#[derive(Debug, Clone)]
pub struct PropagatorSymbol {
    pub epsilon: f64,
    pub dt: f64,
    pub blocks: Vec<[f64; 4]>,
}

/// Closed-form `exp(dt A)` for `A = [[0, 1], [−μ², −εμ]]`.
pub fn propagator_block(mu: f64, epsilon: f64, dt: f64) -> [f64; 4] {
    if mu == 0.0 {
        return [1.0, dt, 0.0, 1.0];
    }
    let a = 0.5 * epsilon * mu;
    let rho = mu * (1.0 - 0.25 * epsilon * epsilon).sqrt();
    let decay = (-a * dt).exp();
    let (sin, cos) = (rho * dt).sin_cos();
    let s = sin / rho;
    [
        decay * (cos + a * s),
        decay * s,
        -decay * s * mu * mu,
        decay * (cos - a * s),
    ]
}

pub fn build_propagator(grid: &PeriodicGrid, epsilon: f64, dt: f64) -> Result<PropagatorSymbol> {
    check_epsilon(epsilon)?;
    let blocks = (0..grid.len())
        .map(|i| propagator_block(grid.wavenumber_sq(i), epsilon, dt))
        .collect();
    Ok(PropagatorSymbol { epsilon, dt, blocks })
}

/// Exact damped-plate flow over `symbol.dt`; the time stamp is left unchanged.
pub fn linear_step(state: &State, symbol: &PropagatorSymbol) -> State {
    let grid = state.grid().clone();
    debug_assert_eq!(symbol.blocks.len(), grid.len());
    let mut u = Field::zeros(&grid, state.u.num_components());
    let mut u_t = u.clone();
    for c in 0..state.u.num_components() {
        let mut a = grid.forward(&state.u.comps[c]);
        let mut b = grid.forward(&state.u_t.comps[c]);
        for ((x, y), m) in a.iter_mut().zip(b.iter_mut()).zip(&symbol.blocks) {
            let (x0, y0): (Complex64, Complex64) = (*x, *y);
            *x = x0 * m[0] + y0 * m[1];
            *y = x0 * m[2] + y0 * m[3];
        }
        u.comps[c] = grid.inverse(&a);
        u_t.comps[c] = grid.inverse(&b);
    }
    State { u, u_t, t: state.t }
}

/// One RK4 step of `u_t' = N_ε(u, u_t)` with `u` held fixed; the time stamp is left unchanged.
pub fn nonlinear_step(state: &State, dt: f64, nonlinearity: &Nonlinearity, epsilon: f64) -> Result<State> {
    if nonlinearity.target().is_flat() {
        return Ok(state.clone());
    }
    let frozen = nonlinearity.freeze(&state.u)?;
    let f = |w: &Field| -> Result<Field> {
        let k = nonlinearity.regularized_frozen(&frozen, w, epsilon)?;
        if !k.is_finite() {
            return Err(Error::NonFinite { t: state.t, step: 0 });
        }
        Ok(k)
    };
    let w = &state.u_t;
    let k1 = f(w)?;
    let k2 = f(&w.axpy(0.5 * dt, &k1))?;
    let k3 = f(&w.axpy(0.5 * dt, &k2))?;
    let k4 = f(&w.axpy(dt, &k3))?;
    let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).add(&k4);
    Ok(State { u: state.u.clone(), u_t: w.axpy(dt / 6.0, &incr), t: state.t })
}

/// Pre-built operators for a fixed step size.
#[derive(Debug, Clone)]
pub struct Stepper {
    target: TargetManifold,
    config: EvolverConfig,
    dt: f64,
    nonlinearity: Nonlinearity,
    full: PropagatorSymbol,
    half: PropagatorSymbol,
    filter: Option<Vec<f64>>,
}

impl Stepper {
    pub fn new(target: &TargetManifold, grid: &PeriodicGrid, config: &EvolverConfig, dt: f64) -> Result<Self> {
        config.validate(grid)?;
        Ok(Self {
            target: *target,
            config: config.clone(),
            dt,
            nonlinearity: Nonlinearity::new(target, grid, config.dealias_factor)?,
            full: build_propagator(grid, config.epsilon, dt)?,
            half: build_propagator(grid, config.epsilon, 0.5 * dt)?,
            filter: match config.filter {
                KickFilter::None => None,
                KickFilter::Sinc => Some(
                    (0..grid.len())
                        .map(|i| {
                            let theta = dt * grid.wavenumber_sq(i);
                            if theta == 0.0 { 1.0 } else { theta.sin() / theta }
                        })
                        .collect(),
                ),
            },
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    /// Advance by `dt`; `index` labels the step in error reports.
    pub fn step(&self, state: &State, index: usize) -> Result<State> {
        let t_new = state.t + self.dt;
        let eps = self.config.epsilon;
        let tag = |e: Error| match e {
            Error::NonFinite { .. } => Error::NonFinite { t: t_new, step: index },
            e @ Error::BelowInjectivityThreshold { .. } => {
                Error::ConstraintEscape { t: t_new, step: index, source: Box::new(e) }
            }
            e => e,
        };
        let mut next = if self.target.is_flat() {
            linear_step(state, &self.full)
        } else {
            match self.config.scheme {
                SplittingScheme::StrangSplit => {
                    let a = linear_step(state, &self.half);
                    self.check(&a, t_new, index)?;
                    let b = self.kick(&a, eps).map_err(tag)?;
                    linear_step(&b, &self.half)
                }
                SplittingScheme::LieSplit => {
                    let b = self.kick(state, eps).map_err(tag)?;
                    linear_step(&b, &self.full)
                }
            }
        };
        next.t = t_new;
        self.check(&next, t_new, index)?;
        if self.config.renormalize == Renormalize::ProjectEveryStep {
            renormalize(&self.target, &mut next).map_err(tag)?;
        }
        Ok(next)
    }

    /// Nonlinear substep with the optional filter applied to the velocity increment.
    fn kick(&self, state: &State, eps: f64) -> Result<State> {
        let mut next = nonlinear_step(state, self.dt, &self.nonlinearity, eps)?;
        if let Some(weights) = &self.filter {
            let grid = state.grid();
            for (out, before) in next.u_t.comps.iter_mut().zip(&state.u_t.comps) {
                let delta: Vec<f64> = out.iter().zip(before).map(|(a, b)| a - b).collect();
                let mut spec = grid.forward(&delta);
                spec.iter_mut().zip(weights).for_each(|(c, w)| *c *= w);
                let filtered = grid.inverse(&spec);
                for ((o, b), d) in out.iter_mut().zip(before).zip(filtered) {
                    *o = b + d;
                }
            }
        }
        Ok(next)
    }

    fn check(&self, state: &State, t: f64, step: usize) -> Result<()> {
        if !state.u.is_finite() || !state.u_t.is_finite() {
            return Err(Error::NonFinite { t, step });
        }
        let escape = |e| Err(Error::ConstraintEscape { t, step, source: Box::new(e) });
        let limit = self.target.tube_width().unwrap_or(f64::INFINITY);
        let mut p = vec![0.0; state.u.num_components()];
        let mut sup: f64 = 0.0;
        for i in 0..state.u.len() {
            state.u.point_into(i, &mut p);
            if let Err(e) = self.target.check_admissible(&p) {
                return escape(e);
            }
            sup = sup.max(self.target.distance(&p));
        }
        if sup >= limit {
            return escape(Error::OutsideTube { sup_distance: sup, limit });
        }
        Ok(())
    }
}

/// `u ← π(u)`, `u_t ← P_u u_t` pointwise.
pub fn renormalize(target: &TargetManifold, state: &mut State) -> Result<()> {
    let l = state.u.num_components();
    let (mut p, mut v, mut q, mut w) = (vec![0.0; l], vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    for i in 0..state.u.len() {
        state.u.point_into(i, &mut p);
        state.u_t.point_into(i, &mut v);
        target.nearest_point_into(&p, &mut q)?;
        target.project_into(&q, &v, &mut w)?;
        state.u.set_point(i, &q);
        state.u_t.set_point(i, &w);
    }
    Ok(())
}

/// Single step with freshly built operators.
pub fn step(state: &State, config: &EvolverConfig, target: &TargetManifold) -> Result<State> {
    Stepper::new(target, state.grid(), config, config.dt)?.step(state, 1)
}

/// Receives the states selected for recording.
pub trait DiagnosticsSink {
    fn observe(&mut self, step: usize, state: &State) -> Result<()>;
}

/// Sink that ignores everything.
pub struct NullSink;

impl DiagnosticsSink for NullSink {
    fn observe(&mut self, _: usize, _: &State) -> Result<()> {
        Ok(())
    }
}

/// Result of [`evolve`]: the last good state and, on a numerical abort, its cause.
#[derive(Debug)]
pub struct Evolution {
    pub state: State,
    pub steps: usize,
    pub dt: f64,
    pub abort: Option<Error>,
}

impl Evolution {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Number of steps and effective step size landing exactly on `t_final`.
pub fn step_plan(t_final: f64, dt: f64) -> (usize, f64) {
    if t_final <= 0.0 {
        return (0, dt);
    }
    let n = ((t_final / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (n, t_final / n as f64)
}

/// Integrate from `initial.t` to `initial.t + duration`, recording the
/// initial state, every `record_stride`-th state and the final state.
pub fn evolve(
    initial: &State,
    duration: f64,
    config: &EvolverConfig,
    target: &TargetManifold,
    record_stride: usize,
    sink: &mut dyn DiagnosticsSink,
) -> Result<Evolution> {
    let (n, dt) = step_plan(duration, config.dt);
    let plan = StepRange { t0: initial.t, dt, first: 0, last: n };
    evolve_range(initial, &plan, config, target, record_stride, sink)
}

/// Steps `first+1..=last` of a fixed step grid `t_i = t0 + i·dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRange {
    pub t0: f64,
    pub dt: f64,
    pub first: usize,
    pub last: usize,
}

/// Continue from `state` (which sits at step `plan.first`); the first state
/// is observed only when `plan.first == 0`.
pub fn evolve_range(
    state: &State,
    plan: &StepRange,
    config: &EvolverConfig,
    target: &TargetManifold,
    record_stride: usize,
    sink: &mut dyn DiagnosticsSink,
) -> Result<Evolution> {
    config.validate(state.grid())?;
    if state.u.num_components() != target.ambient_dim() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} components, target needs {}",
            state.u.num_components(),
            target.ambient_dim()
        )));
    }
    let StepRange { t0, dt, first, last } = *plan;
    let stride = record_stride.max(1);
    let stepper = Stepper::new(target, state.grid(), config, dt)?;
    let mut state = state.clone();
    if first == 0 {
        sink.observe(0, &state)?;
    }
    for i in first + 1..=last {
        match stepper.step(&state, i) {
            Ok(mut next) => {
                // avoid drift of the time stamp over many steps
                next.t = t0 + i as f64 * dt;
                state = next;
            }
            Err(e) if e.is_numerical_abort() => {
                return Ok(Evolution { state, steps: i - 1, dt, abort: Some(e) });
            }
            Err(e) => return Err(e),
        }
        if i % stride == 0 || i == last {
            sink.observe(i, &state)?;
        }
    }
    Ok(Evolution { state, steps: last, dt, abort: None })
}
