//! Invariant suites on seeded random inputs, reported as a residual table.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::initial::{great_circle_state, project_data, random_band_limited};
use crate::error::Result;
use crate::evolver::{evolve, EvolverConfig, NullSink, State};
use crate::geometry::{dot, TargetManifold};
use crate::grid::{Field, MultiIndex, PeriodicGrid};
use crate::nonlinearity::{Nonlinearity, DEFAULT_DEALIAS_FACTOR};
use crate::oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub suite: &'static str,
    pub check: String,
    pub value: f64,
    pub bound: Bound,
    pub threshold: f64,
}

impl VerifyRow {
    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.value <= self.threshold,
            Bound::AtLeast => self.value >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub rows: Vec<VerifyRow>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(VerifyRow::passed)
    }

    pub fn row(&self, check: &str) -> Option<&VerifyRow> {
        self.rows.iter().find(|r| r.check == check)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<44} {:>12} {:>12}  status", "suite", "check", "value", "bound")?;
        for r in &self.rows {
            let op = match r.bound {
                Bound::AtMost => "<=",
                Bound::AtLeast => ">=",
            };
            let status = if r.passed() { "ok" } else { "FAIL" };
            writeln!(f, "{:<12} {:<44} {:>12.3e} {op}{:>10.1e}  {status}", r.suite, r.check, r.value, r.threshold)?;
        }
        write!(f, "{} checks in {:.1} s", self.rows.len(), self.seconds)
    }
}

struct Rows(Vec<VerifyRow>);

impl Rows {
    fn at_most(&mut self, suite: &'static str, check: impl Into<String>, value: f64, threshold: f64) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        self.0.push(VerifyRow { suite, check: check.into(), value, bound: Bound::AtMost, threshold });
    }

    fn at_least(&mut self, suite: &'static str, check: impl Into<String>, value: f64, threshold: f64) {
        let value = if value.is_nan() { f64::NEG_INFINITY } else { value };
        self.0.push(VerifyRow { suite, check: check.into(), value, bound: Bound::AtLeast, threshold });
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Smooth manifold-valued data sampled at `points` from one band-limited raw field.
pub fn random_manifold_data(target: &TargetManifold, dim: usize, points: &[usize], seed: u64) -> Result<Vec<State>> {
    let finest = *points.iter().max().expect("at least one resolution");
    let fine = PeriodicGrid::standard(dim, finest)?;
    let l = target.ambient_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = target.radius().unwrap_or(1.0);
    let mut base = vec![0.0; l];
    base[l - 1] = r;
    let raw = Field::constant(&fine, &base).add(&random_band_limited(&fine, l, 3, 0.3 * r, &mut rng));
    let raw_v = random_band_limited(&fine, l, 3, 1.0, &mut rng);
    points
        .iter()
        .map(|&m| {
            let g = fine.with_points(m)?;
            project_data(target, &raw.resample(&g), &raw_v.resample(&g), 0.0)
        })
        .collect()
}

fn geometry_suite(rows: &mut Rows, rng: &mut ChaCha8Rng) -> Result<()> {
    let sphere = TargetManifold::round_sphere(3, 1.5)?;
    let (mut jet, mut idem, mut tangency): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let mut p = random_vec(rng, 3);
        let n = crate::geometry::norm(&p);
        let radius = rng.random_range(1.0..2.0);
        p.iter_mut().for_each(|x| *x *= radius / n);
        let w: Vec<Vec<f64>> = (0..3).map(|_| random_vec(rng, 3)).collect();
        for order in 1..=3 {
            let dirs: Vec<&[f64]> = w[..order].iter().map(|x| x.as_slice()).collect();
            let exact = sphere.projector_derivative(&p, &dirs)?;
            let fd = oracle::fd_projector_jet(&sphere, &p, &dirs, 1e-3)?;
            jet = jet.max(exact.max_abs_diff(&fd));
        }
        let proj = sphere.projector(&p)?;
        idem = idem.max(proj.compose(&proj).max_abs_diff(&proj));
        // tangent pair at the foot point of the unit sphere
        let unit = TargetManifold::unit_sphere(3);
        let q: Vec<f64> = p.iter().map(|x| x / radius).collect();
        let mut a = vec![0.0; 3];
        let mut b = vec![0.0; 3];
        unit.project_into(&q, &w[0], &mut a)?;
        unit.project_into(&q, &w[1], &mut b)?;
        let mut out = vec![0.0; 3];
        unit.apply_jet(&q, &[&a], &b, &mut out)?;
        let ab = dot(&a, &b);
        tangency = tangency.max(out.iter().zip(&q).map(|(o, qi)| (o + ab * qi).abs()).fold(0.0, f64::max));
    }
    rows.at_most("geometry", "closed-form jets vs finite differences", jet, 1e-6);
    rows.at_most("geometry", "projector idempotence", idem, 1e-13);
    rows.at_most("geometry", "dP tangency identity", tangency, 1e-13);
    Ok(())
}

fn grid_suite(rows: &mut Rows, rng: &mut ChaCha8Rng) -> Result<()> {
    let g = PeriodicGrid::standard(2, 32)?;
    let f = random_band_limited(&g, 2, 6, 1.0, rng);
    let pointwise: f64 = f.comps.iter().flatten().map(|x| x * x).sum::<f64>() * g.volume() / g.len() as f64;
    let spectral = f.sobolev_norm(0.0).powi(2);
    rows.at_most("grid", "Parseval", (pointwise - spectral).abs() / spectral, 1e-12);
    let xy = f.derivative(&MultiIndex::axis(0, 1))?.derivative(&MultiIndex::axis(1, 1))?;
    let yx = f.derivative(&MultiIndex::axis(1, 1))?.derivative(&MultiIndex::axis(0, 1))?;
    rows.at_most("grid", "mixed derivatives commute", xy.max_abs_diff(&yx), 1e-10);
    let semigroup = f.heat_mollify(0.1)?.heat_mollify(0.2)?.max_abs_diff(&f.heat_mollify(0.3)?);
    rows.at_most("grid", "heat mollifier semigroup", semigroup, 1e-13);
    let h1 = PeriodicGrid::standard(1, 64)?;
    let s = random_band_limited(&h1, 1, 8, 1.0, rng);
    let lap = s.laplacian().max_abs_diff(&s.derivative(&MultiIndex::axis(0, 2))?);
    rows.at_most("grid", "laplacian equals second derivative", lap, 1e-10);
    Ok(())
}

fn nonlinearity_suite(rows: &mut Rows, seed: u64) -> Result<()> {
    let t = TargetManifold::unit_sphere(3);
    for (name, states) in [
        (
            "great circle",
            [64, 128]
                .iter()
                .map(|&m| great_circle_state(&PeriodicGrid::standard(1, m)?, &t, &[1], 2.0, 0.0, 0.0))
                .collect::<Result<Vec<_>>>()?,
        ),
        ("random data", random_manifold_data(&t, 1, &[64, 128], seed)?),
    ] {
        let mut res = Vec::new();
        for s in &states {
            let nl = Nonlinearity::new(&t, s.grid(), DEFAULT_DEALIAS_FACTOR)?;
            res.push(nl.orthogonality_residual(&s.u, &s.u_t)?);
        }
        rows.at_most("nonlinearity", format!("orthogonality, {name}, M=128"), res[1], 1e-8);
        // refinement cannot improve on roundoff, so a resolved coarse level counts as converged
        let ratio = if res[0] <= ROUNDOFF_FLOOR { f64::INFINITY } else { res[0] / res[1] };
        rows.at_least("nonlinearity", format!("orthogonality decay 64->128, {name}"), ratio, 4.0);
    }
    let s = &random_manifold_data(&t, 1, &[128], seed ^ 1)?[0];
    let nl = Nonlinearity::new(&t, s.grid(), DEFAULT_DEALIAS_FACTOR)?;
    let c = nl.chain_identity_residual(&s.u, &s.u_t, None)?;
    rows.at_most("nonlinearity", "normal part of laplacian", c.laplacian, 1e-8);
    rows.at_most("nonlinearity", "normal part of bilaplacian", c.bilaplacian, 1e-6);
    Ok(())
}

/// Residuals at or below this are treated as resolved to roundoff.
pub const ROUNDOFF_FLOOR: f64 = 1e-11;

fn oracle_suite(rows: &mut Rows, seed: u64) -> Result<()> {
    let g = PeriodicGrid::standard(1, 128)?;
    let mut worst: f64 = 0.0;
    for eps in [0.0, 0.1, 0.5, 0.99] {
        for dt in [1e-3, 1e-2] {
            worst = worst.max(oracle::propagator_discrepancy(&g, eps, dt)?);
        }
    }
    let g2 = PeriodicGrid::standard(2, 64)?;
    for eps in [0.0, 0.5] {
        worst = worst.max(oracle::propagator_discrepancy(&g2, eps, 1e-2)?);
    }
    rows.at_most("oracle", "propagator vs dense exponential", worst, 1e-12);

    let t = TargetManifold::unit_sphere(3);
    let data = &random_manifold_data(&t, 1, &[128], seed ^ 2)?[0];
    for (m, l) in [(1, 0), (2, 0), (1, 1), (2, 1)] {
        let r = oracle::check_leibniz_expansion(&t, &data.u, m, l)?;
        rows.at_most("oracle", format!("leibniz m={m} l={l}, M=128"), r.sup_residual(), 1e-7);
        let decay = if r.residuals[r.residuals.len() - 2].1 <= ROUNDOFF_FLOOR { f64::INFINITY } else { r.min_decay_ratio() };
        rows.at_least("oracle", format!("leibniz m={m} l={l} decay"), decay, 4.0);
    }
    let other = &random_manifold_data(&t, 1, &[128], seed ^ 3)?[0];
    for eps in [0.0, 0.5] {
        for m in 0..=1 {
            let r = oracle::check_difference_expansion(&t, data, other, m, eps)?;
            rows.at_most("oracle", format!("difference m={m} eps={eps}, M=128"), r.sup_residual(), 1e-7);
            let decay =
                if r.residuals[r.residuals.len() - 2].1 <= ROUNDOFF_FLOOR { f64::INFINITY } else { r.min_decay_ratio() };
            rows.at_least("oracle", format!("difference m={m} eps={eps} decay"), decay, 4.0);
        }
    }

    let small = &random_manifold_data(&t, 1, &[32], seed ^ 4)?[0];
    let reference = oracle::reference_integrate(small, 0.1, &t, 0.0, 2e-4)?;
    let cfg = EvolverConfig::new(0.0, 1e-4, 3);
    let fast = evolve(small, 0.1, &cfg, &t, 1000, &mut NullSink)?.state;
    rows.at_most("oracle", "splitting vs unsplit reference, M=32", fast.u.max_abs_diff(&reference.u), 1e-5);
    Ok(())
}

/// Run every suite; the report passes when every row meets its bound.
pub fn verify(seed: u64) -> Result<VerifyReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Rows(Vec::new());
    geometry_suite(&mut rows, &mut rng)?;
    grid_suite(&mut rows, &mut rng)?;
    nonlinearity_suite(&mut rows, seed)?;
    oracle_suite(&mut rows, seed)?;
    Ok(VerifyReport { seed, rows: rows.0, seconds: start.elapsed().as_secs_f64() })
}
