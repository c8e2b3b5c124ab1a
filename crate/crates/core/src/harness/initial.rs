//! Initial data on the target: exact great circles, random bumps, files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BumpSpec, InitialDataSpec, InitialKind};
use super::io;
use crate::diagnostics::constraint_report;
use crate::error::{Error, Result};
use crate::evolver::State;
use crate::geometry::TargetManifold;
use crate::grid::{Field, PeriodicGrid};

/// Phase `a·x + ωt + φ` of the great-circle wave.
fn phase(a: &[f64], x: &[f64], omega: f64, t: f64, phi: f64) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + omega * t + phi
}

/// `u = r(cos θ, sin θ, 0, …)`, `u_t = rω(−sin θ, cos θ, 0, …)` with `θ = a·x + ωt + φ`.
pub fn great_circle_state(
    grid: &PeriodicGrid,
    target: &TargetManifold,
    wave: &[i64],
    omega: f64,
    phi: f64,
    t: f64,
) -> Result<State> {
    let l = target.ambient_dim();
    if l < 2 {
        return Err(Error::Config("great-circle data needs ambient_dim >= 2".into()));
    }
    if wave.is_empty() || wave.len() > grid.dim() {
        return Err(Error::Config(format!("wave vector must have 1..={} entries", grid.dim())));
    }
    // integer wave numbers in units of the fundamental frequency per axis
    let a: Vec<f64> = wave
        .iter()
        .enumerate()
        .map(|(i, &k)| k as f64 * 2.0 * std::f64::consts::PI / grid.periods()[i])
        .collect();
    let r = target.radius().unwrap_or(1.0);
    let u = Field::from_fn(grid, l, |x, o| {
        let th = phase(&a, x, omega, t, phi);
        o.fill(0.0);
        o[0] = r * th.cos();
        o[1] = r * th.sin();
    });
    let ut = Field::from_fn(grid, l, |x, o| {
        let th = phase(&a, x, omega, t, phi);
        o.fill(0.0);
        o[0] = -r * omega * th.sin();
        o[1] = r * omega * th.cos();
    });
    State::new(u, ut, t)
}

/// Real band-limited field with `|ξ|_∞ ≤ band`, random Gaussian coefficients, scaled to sup norm `amplitude`.
pub fn random_band_limited(
    grid: &PeriodicGrid,
    components: usize,
    band: usize,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Field {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dim = grid.dim();
    let b = band as i64;
    let mut comps = Vec::with_capacity(components);
    for _ in 0..components {
        let mut modes = Vec::new();
        let range: Vec<[i64; 2]> = if dim == 1 {
            (1..=b).map(|k| [k, 0]).collect()
        } else {
            (-b..=b)
                .flat_map(|k| (-b..=b).map(move |j| [k, j]))
                .filter(|&[k, j]| k > 0 || (k == 0 && j > 0))
                .collect()
        };
        for k in range {
            let (c, s): (f64, f64) = (normal.sample(rng), normal.sample(rng));
            modes.push((k, c, s));
        }
        let periods = grid.periods();
        let values: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.coordinates(i);
                modes
                    .iter()
                    .map(|&(k, c, s)| {
                        let th: f64 = (0..dim).map(|d| k[d] as f64 * 2.0 * std::f64::consts::PI / periods[d] * x[d]).sum();
                        c * th.cos() + s * th.sin()
                    })
                    .sum()
            })
            .collect();
        comps.push(values);
    }
    let mut f = Field::from_components(grid, comps).expect("component lengths match grid");
    let sup = f.sup_norm();
    if sup > 0.0 {
        f = f.scaled(amplitude / sup);
    } else {
        f = f.scaled(0.0);
    }
    f
}

/// Map `raw` pointwise through the nearest-point map and `raw_v` through `P_{u₀}`.
pub fn project_data(target: &TargetManifold, raw: &Field, raw_v: &Field, t: f64) -> Result<State> {
    let l = target.ambient_dim();
    let grid = &raw.grid;
    let mut u = Field::zeros(grid, l);
    let mut v = Field::zeros(grid, l);
    let (mut p, mut q, mut out) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    for i in 0..grid.len() {
        raw.point_into(i, &mut p);
        target.nearest_point_into(&p, &mut out)?;
        u.set_point(i, &out);
        raw_v.point_into(i, &mut q);
        target.project_into(&out, &q, &mut p)?;
        v.set_point(i, &p);
    }
    State::new(u, v, t)
}

fn add_bump(state: &State, bump: &BumpSpec, target: &TargetManifold) -> Result<State> {
    let grid = state.grid();
    let l = target.ambient_dim();
    let periods = grid.periods().to_vec();
    let center: Vec<f64> = (0..grid.dim()).map(|d| bump.center.get(d).copied().unwrap_or(periods[d] / 2.0)).collect();
    let profile = Field::from_fn(grid, l, |x, o| {
        // periodic distance via chords keeps the bump smooth on the torus
        let r2: f64 = (0..x.len())
            .map(|d| {
                let s = periods[d] / std::f64::consts::PI * ((x[d] - center[d]) * std::f64::consts::PI / periods[d]).sin();
                s * s
            })
            .sum();
        o.fill(0.0);
        o[l - 1] = bump.amplitude * (-r2 / (2.0 * bump.width * bump.width)).exp();
    });
    project_data(target, &state.u.add(&profile), &state.u_t, state.t)
}

/// Build the data described by `spec`, satisfying `u₀ ∈ N` and `u₁ ∈ T_{u₀}N`.
pub fn initial_data(
    spec: &InitialDataSpec,
    grid: &PeriodicGrid,
    target: &TargetManifold,
    run_seed: u64,
) -> Result<State> {
    let l = target.ambient_dim();
    let state = match &spec.kind {
        InitialKind::GreatCircle { wave, omega, phase } => great_circle_state(grid, target, wave, *omega, *phase, 0.0)?,
        InitialKind::RandomBump { amplitude, band, seed } => {
            if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                return Err(Error::Config(format!("amplitude must be non-negative, got {amplitude}")));
            }
            if let Some(r) = target.radius() {
                // sup of the perturbation is the amplitude, so this keeps every raw point in the tube
                if *amplitude >= r - target.injectivity_threshold {
                    return Err(Error::BelowInjectivityThreshold {
                        norm: r - amplitude,
                        threshold: target.injectivity_threshold,
                    });
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(run_seed));
            let mut base = vec![0.0; l];
            base[l - 1] = target.radius().unwrap_or(1.0);
            let raw = Field::constant(grid, &base).add(&random_band_limited(grid, l, *band, *amplitude, &mut rng));
            let raw_v = random_band_limited(grid, l, *band, *amplitude, &mut rng);
            project_data(target, &raw, &raw_v, 0.0)?
        }
        InitialKind::FromFile { path } => {
            let s = io::read_state(path)?;
            if s.grid() != grid || s.u.num_components() != l {
                return Err(Error::ShapeMismatch(format!(
                    "{} does not match the configured grid and target",
                    path.display()
                )));
            }
            let c = constraint_report(&s, target)?;
            if c.manifold_dist > 1e-12 || c.tangency > 1e-12 {
                project_data(target, &s.u, &s.u_t, s.t)?
            } else {
                s
            }
        }
    };
    match &spec.bump {
        Some(b) if b.amplitude != 0.0 => add_bump(&state, b, target),
        _ => Ok(state),
    }
}

/// Caloric extension `u₀^δ = π(e^{δΔ}u₀)`, `u₁^δ = P_{e^{δΔ}u₀}(e^{δΔ}u₁)`.
pub fn mollify_initial_data(state: &State, delta: f64, target: &TargetManifold) -> Result<State> {
    if delta == 0.0 {
        return Ok(state.clone());
    }
    let mu = state.u.heat_mollify(delta)?;
    let mv = state.u_t.heat_mollify(delta)?;
    if let Some(limit) = target.tube_width() {
        let sup = (0..mu.len()).map(|i| target.distance(&mu.point(i))).fold(0.0, f64::max);
        if sup >= limit || !sup.is_finite() {
            return Err(Error::OutsideTube { sup_distance: sup, limit });
        }
    }
    project_data(target, &mu, &mv, state.t)
}
