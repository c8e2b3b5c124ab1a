//! Slow independent references used to check the fast paths.
//!
//! The expansion checks build their right-hand sides from a small term
//! algebra: a term is a coefficient times a projector jet evaluated at `u`,
//! at `v`, or as the difference of the two, applied to derivative fields.
//! Differentiating a term applies the chain rule to the jet and the product
//! rule to its arguments; like terms are merged, so every combinatorial
//! coefficient is generated rather than written down.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolver::State;
use crate::geometry::{LinearMap, TargetManifold};
use crate::grid::{Field, MultiIndex, PeriodicGrid};
use crate::nonlinearity::{check_epsilon, Nonlinearity, DEFAULT_DEALIAS_FACTOR};

/// Nested central differences of the projector, Richardson-extrapolated once
/// from steps `h` and `2h`: returns `d^jP_p(w_1, …, w_j, ·)`.
pub fn fd_projector_jet(
    target: &TargetManifold,
    p: &[f64],
    directions: &[&[f64]],
    h: f64,
) -> Result<LinearMap> {
    let l = target.ambient_dim();
    let fine = nested_difference(target, p, directions, h)?;
    let coarse = nested_difference(target, p, directions, 2.0 * h)?;
    let entries = fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect();
    Ok(LinearMap { dim: l, entries })
}

fn nested_difference(
    target: &TargetManifold,
    p: &[f64],
    directions: &[&[f64]],
    h: f64,
) -> Result<Vec<f64>> {
    match directions.split_first() {
        None => Ok(target.projector(p)?.entries),
        Some((w, rest)) => {
            let plus: Vec<f64> = p.iter().zip(*w).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = p.iter().zip(*w).map(|(a, b)| a - h * b).collect();
            let f = nested_difference(target, &plus, rest, h)?;
            let g = nested_difference(target, &minus, rest, h)?;
            Ok(f.iter().zip(&g).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        }
    }
}

pub type Matrix2 = [[f64; 2]; 2];

fn mat_mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// `exp(tA)` by scaling and squaring with a degree-20 Taylor polynomial.
pub fn dense_expm(a: &Matrix2, t: f64) -> Matrix2 {
    let norm = a.iter().flatten().map(|x| (x * t).abs()).fold(0.0, f64::max) * 2.0;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = t / 2f64.powi(squarings);
    let b = [[a[0][0] * scale, a[0][1] * scale], [a[1][0] * scale, a[1][1] * scale]];
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = result;
    for n in 1..=20 {
        term = mat_mul(&term, &b);
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x /= n as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

/// Largest entry gap between the closed-form symbol and [`dense_expm`] over
/// the lattice, measured in energy coordinates `D S D⁻¹`, `D = diag(max(|ξ|², 1), 1)`.
pub fn propagator_discrepancy(grid: &PeriodicGrid, epsilon: f64, dt: f64) -> Result<f64> {
    let symbol = crate::evolver::build_propagator(grid, epsilon, dt)?;
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut worst: f64 = 0.0;
    for (i, block) in symbol.blocks.iter().enumerate() {
        let mu = grid.wavenumber_sq(i);
        if let Some(&w) = cache.get(&mu.to_bits()) {
            worst = worst.max(w);
            continue;
        }
        let d = mu.max(1.0);
        // D A D⁻¹ for A = [[0, 1], [−μ², −εμ]]
        let scaled = [[0.0, d], [-mu * mu / d, -epsilon * mu]];
        let e = dense_expm(&scaled, dt);
        let fast = [[block[0], block[1] * d], [block[2] / d, block[3]]];
        let gap = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| (e[r][c] - fast[r][c]).abs())
            .fold(0.0, f64::max);
        cache.insert(mu.to_bits(), gap);
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// Largest grid size accepted by [`reference_integrate`].
pub const REFERENCE_MAX_POINTS: usize = 32;

/// Classical RK4 on the unsplit system `(u, u_t)' = (u_t, −Δ²u + εΔu_t + N_ε)`.
pub fn reference_integrate(
    initial: &State,
    duration: f64,
    target: &TargetManifold,
    epsilon: f64,
    dt_ref: f64,
) -> Result<State> {
    check_epsilon(epsilon)?;
    let grid = initial.grid();
    if grid.points() > REFERENCE_MAX_POINTS {
        return Err(Error::InvalidGrid(format!(
            "reference integration is capped at {REFERENCE_MAX_POINTS} points per axis"
        )));
    }
    let nl = Nonlinearity::new(target, grid, DEFAULT_DEALIAS_FACTOR)?;
    let rhs = |u: &Field, v: &Field| -> Result<(Field, Field)> {
        let mut a = u.bilaplacian().scaled(-1.0);
        if epsilon != 0.0 {
            a = a.axpy(epsilon, &v.laplacian());
        }
        if !target.is_flat() {
            a = a.add(&nl.regularized(u, v, epsilon)?);
        }
        Ok((v.clone(), a))
    };
    let (n, dt) = crate::evolver::step_plan(duration, dt_ref);
    let (mut u, mut v) = (initial.u.clone(), initial.u_t.clone());
    for i in 0..n {
        let (k1u, k1v) = rhs(&u, &v)?;
        let (k2u, k2v) = rhs(&u.axpy(0.5 * dt, &k1u), &v.axpy(0.5 * dt, &k1v))?;
        let (k3u, k3v) = rhs(&u.axpy(0.5 * dt, &k2u), &v.axpy(0.5 * dt, &k2v))?;
        let (k4u, k4v) = rhs(&u.axpy(dt, &k3u), &v.axpy(dt, &k3v))?;
        u = u.axpy(dt / 6.0, &k1u.axpy(2.0, &k2u).axpy(2.0, &k3u).add(&k4u));
        v = v.axpy(dt / 6.0, &k1v.axpy(2.0, &k2v).axpy(2.0, &k3v).add(&k4v));
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite { t: initial.t + (i + 1) as f64 * dt, step: i + 1 });
        }
    }
    State::new(u, v, initial.t + duration)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionCheckReport {
    pub check: String,
    pub m: usize,
    /// `(points per axis, sup residual)` from coarse to fine.
    pub residuals: Vec<(usize, f64)>,
}

impl ExpansionCheckReport {
    pub fn sup_residual(&self) -> f64 {
        self.residuals.last().map_or(0.0, |r| r.1)
    }

    /// Smallest ratio between consecutive residuals (coarse / fine).
    pub fn min_decay_ratio(&self) -> f64 {
        self.residuals
            .windows(2)
            .map(|w| w[0].1 / w[1].1.max(f64::MIN_POSITIVE))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for ExpansionCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} m={}:", self.check, self.m)?;
        for (m, r) in &self.residuals {
            write!(f, " M={m} {r:.3e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum JetAt {
    U,
    V,
    /// `d^JP_u − d^JP_v`
    Diff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Source {
    U,
    V,
    /// `u − v`
    W,
    /// Fixed basis vector filling a free tensor slot.
    Basis(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Arg {
    source: Source,
    velocity: bool,
    alpha: MultiIndex,
}

impl Arg {
    fn pos(source: Source, alpha: MultiIndex) -> Self {
        Arg { source, velocity: false, alpha }
    }

    fn vel(source: Source, alpha: MultiIndex) -> Self {
        Arg { source, velocity: true, alpha }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Monomial {
    jet: JetAt,
    /// Derivative slots, kept sorted since they commute.
    dirs: Vec<Arg>,
    proj: Arg,
}

#[derive(Debug, Clone, Default)]
struct Expansion {
    terms: BTreeMap<Monomial, f64>,
}

impl Expansion {
    fn push(&mut self, coeff: f64, jet: JetAt, mut dirs: Vec<Arg>, proj: Arg) {
        if coeff == 0.0 {
            return;
        }
        dirs.sort();
        *self.terms.entry(Monomial { jet, dirs, proj }).or_insert(0.0) += coeff;
    }

    /// `∂_axis` of every term.
    fn differentiate(&self, axis: usize) -> Expansion {
        let mut out = Expansion::default();
        let e = MultiIndex::axis(axis, 1);
        for (mono, &c) in &self.terms {
            let with = |src: Source| {
                let mut d = mono.dirs.clone();
                d.push(Arg::pos(src, e));
                d
            };
            match mono.jet {
                JetAt::U => out.push(c, JetAt::U, with(Source::U), mono.proj),
                JetAt::V => out.push(c, JetAt::V, with(Source::V), mono.proj),
                JetAt::Diff => {
                    out.push(c, JetAt::Diff, with(Source::U), mono.proj);
                    out.push(c, JetAt::V, with(Source::W), mono.proj);
                }
            }
            for i in 0..mono.dirs.len() {
                if matches!(mono.dirs[i].source, Source::Basis(_)) {
                    continue;
                }
                let mut d = mono.dirs.clone();
                d[i].alpha = d[i].alpha.bump(axis);
                out.push(c, mono.jet, d, mono.proj);
            }
            if !matches!(mono.proj.source, Source::Basis(_)) {
                let mut p = mono.proj;
                p.alpha = p.alpha.bump(axis);
                out.push(c, mono.jet, mono.dirs.clone(), p);
            }
        }
        out
    }

    fn differentiate_multi(&self, gamma: &MultiIndex) -> Expansion {
        let mut e = self.clone();
        for axis in 0..2 {
            for _ in 0..gamma.0[axis] {
                e = e.differentiate(axis);
            }
        }
        e
    }

    /// `T(u) − T(v)` for every term, telescoped one argument at a time.
    fn telescope(&self) -> Expansion {
        let mut out = Expansion::default();
        let to = |a: Arg, s: Source| Arg { source: s, ..a };
        for (mono, &c) in &self.terms {
            debug_assert_eq!(mono.jet, JetAt::U);
            out.push(c, JetAt::Diff, mono.dirs.clone(), mono.proj);
            let mut args: Vec<Arg> = mono.dirs.clone();
            args.push(mono.proj);
            for i in 0..args.len() {
                let mixed: Vec<Arg> = args
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| match j.cmp(&i) {
                        std::cmp::Ordering::Less => to(a, Source::V),
                        std::cmp::Ordering::Equal => to(a, Source::W),
                        std::cmp::Ordering::Greater => a,
                    })
                    .collect();
                let (proj, dirs) = mixed.split_last().expect("projected slot");
                out.push(c, JetAt::V, dirs.to_vec(), *proj);
            }
        }
        out
    }

    fn max_order(&self) -> usize {
        self.terms.keys().map(|m| m.dirs.len()).max().unwrap_or(0)
    }
}

/// `N_ε` written as monomials in derivatives of `u` and `u_t`.
fn nonlinearity_expansion(dim: usize, epsilon: f64) -> Expansion {
    let mut e = Expansion::default();
    let u = |alpha: MultiIndex| Arg::pos(Source::U, alpha);
    let ut = |alpha: MultiIndex| Arg::vel(Source::U, alpha);
    let d1 = |a: usize| MultiIndex::axis(a, 1);
    let d2 = |a: usize, b: usize| MultiIndex::axis(a, 1).bump(b);
    let z = MultiIndex::ZERO;
    let lap: Vec<MultiIndex> = (0..dim).map(|b| MultiIndex::axis(b, 2)).collect();

    e.push(1.0, JetAt::U, vec![ut(z)], ut(z));
    for x in &lap {
        for y in &lap {
            e.push(1.0, JetAt::U, vec![u(*x)], u(*y));
        }
    }
    for a in 0..dim {
        for x in &lap {
            let gl = x.bump(a);
            e.push(1.0, JetAt::U, vec![u(gl)], u(d1(a)));
            e.push(3.0, JetAt::U, vec![u(d1(a))], u(gl));
            e.push(1.0, JetAt::U, vec![u(d1(a)), u(*x)], u(d1(a)));
            e.push(1.0, JetAt::U, vec![u(d1(a)), u(d1(a))], u(*x));
        }
        for b in 0..dim {
            e.push(2.0, JetAt::U, vec![u(d2(a, b))], u(d2(a, b)));
            e.push(2.0, JetAt::U, vec![u(d2(a, b)), u(d1(b))], u(d1(a)));
            e.push(2.0, JetAt::U, vec![u(d1(a)), u(d1(b))], u(d2(a, b)));
            e.push(1.0, JetAt::U, vec![u(d1(a)), u(d1(b)), u(d1(b))], u(d1(a)));
        }
    }
    if epsilon != 0.0 {
        for a in 0..dim {
            e.push(-epsilon, JetAt::U, vec![u(d1(a)), u(d1(a))], ut(z));
            e.push(-2.0 * epsilon, JetAt::U, vec![u(d1(a))], ut(d1(a)));
        }
        for x in &lap {
            e.push(-epsilon, JetAt::U, vec![u(*x)], ut(z));
        }
    }
    e
}

/// Point-major derivative samples keyed by argument.
struct ArgFields<'a> {
    u: &'a State,
    v: Option<&'a State>,
    cache: HashMap<(Source, bool, MultiIndex), Vec<f64>>,
}

impl<'a> ArgFields<'a> {
    fn new(u: &'a State, v: Option<&'a State>) -> Self {
        Self { u, v, cache: HashMap::new() }
    }

    fn ensure(&mut self, arg: &Arg) -> Result<()> {
        let key = (arg.source, arg.velocity, arg.alpha);
        if matches!(arg.source, Source::Basis(_)) || self.cache.contains_key(&key) {
            return Ok(());
        }
        let pick = |s: &State| if arg.velocity { s.u_t.clone() } else { s.u.clone() };
        let base = match arg.source {
            Source::U => pick(self.u),
            Source::V => pick(self.v.expect("second state")),
            Source::W => pick(self.u).sub(&pick(self.v.expect("second state"))),
            Source::Basis(_) => unreachable!(),
        };
        let f = base.derivative(&arg.alpha)?;
        let l = f.num_components();
        let mut data = vec![0.0; f.len() * l];
        for (c, comp) in f.comps.iter().enumerate() {
            for (i, &x) in comp.iter().enumerate() {
                data[i * l + c] = x;
            }
        }
        self.cache.insert(key, data);
        Ok(())
    }

    fn at(&self, arg: &Arg, i: usize, l: usize, basis: &[usize], buf: &mut [f64]) {
        match arg.source {
            Source::Basis(slot) => {
                buf.iter_mut().for_each(|b| *b = 0.0);
                buf[basis[slot]] = 1.0;
            }
            _ => buf.copy_from_slice(
                &self.cache[&(arg.source, arg.velocity, arg.alpha)][i * l..(i + 1) * l],
            ),
        }
    }
}

/// Evaluate an expansion pointwise on the grid of `u`.
fn evaluate_expansion(
    target: &TargetManifold,
    expansion: &Expansion,
    fields: &mut ArgFields<'_>,
    basis: &[usize],
) -> Result<Field> {
    for mono in expansion.terms.keys() {
        for a in mono.dirs.iter().chain(std::iter::once(&mono.proj)) {
            fields.ensure(a)?;
        }
    }
    let grid = fields.u.u.grid.clone();
    let l = target.ambient_dim();
    let mut out = Field::zeros(&grid, l);
    let mut dir_bufs = vec![vec![0.0; l]; expansion.max_order()];
    let (mut proj, mut tmp, mut tmp2) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    let (mut pu, mut pv) = (vec![0.0; l], vec![0.0; l]);
    let mut acc = vec![0.0; l];
    for i in 0..grid.len() {
        fields.u.u.point_into(i, &mut pu);
        if let Some(v) = fields.v {
            v.u.point_into(i, &mut pv);
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (mono, &c) in &expansion.terms {
            for (buf, a) in dir_bufs.iter_mut().zip(&mono.dirs) {
                fields.at(a, i, l, basis, buf);
            }
            fields.at(&mono.proj, i, l, basis, &mut proj);
            let dirs: Vec<&[f64]> = dir_bufs[..mono.dirs.len()].iter().map(|b| b.as_slice()).collect();
            match mono.jet {
                JetAt::U => target.apply_jet_unbounded(&pu, &dirs, &proj, &mut tmp)?,
                JetAt::V => target.apply_jet_unbounded(&pv, &dirs, &proj, &mut tmp)?,
                JetAt::Diff => {
                    target.apply_jet_unbounded(&pu, &dirs, &proj, &mut tmp)?;
                    target.apply_jet_unbounded(&pv, &dirs, &proj, &mut tmp2)?;
                    tmp.iter_mut().zip(&tmp2).for_each(|(a, b)| *a -= b);
                }
            }
            acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += c * t);
        }
        out.set_point(i, &acc);
    }
    Ok(out)
}

fn multi_indices(dim: usize, order: usize) -> Vec<MultiIndex> {
    match dim {
        1 => vec![MultiIndex::axis(0, order)],
        _ => (0..=order).map(|a| MultiIndex::new(&[a, order - a])).collect(),
    }
}

/// Coarse-to-fine resolutions `M/4, M/2, M` obtained by spectral truncation (at least 8 points).
fn levels(grid: &PeriodicGrid) -> Result<Vec<PeriodicGrid>> {
    let m = grid.points();
    let mut out = Vec::new();
    for div in [4, 2] {
        if m / div >= 8 {
            out.push(grid.with_points(m / div)?);
        }
    }
    out.push(grid.clone());
    Ok(out)
}

fn restrict(s: &State, grid: &PeriodicGrid) -> State {
    State { u: s.u.resample(grid), u_t: s.u_t.resample(grid), t: s.t }
}

/// Compare `∂^γ(d^lP_u)` for all `|γ| = m` against its chain-rule expansion.
pub fn check_leibniz_expansion(
    target: &TargetManifold,
    u: &Field,
    m: usize,
    l: usize,
) -> Result<ExpansionCheckReport> {
    if m + l > crate::geometry::MAX_JET_ORDER || m > 2 {
        return Err(Error::UnsupportedOrder(m + l));
    }
    let dim = u.grid.dim();
    let lt = target.ambient_dim();
    let zeros = Field::zeros(&u.grid, lt);
    let state = State::new(u.clone(), zeros, 0.0)?;
    // free slots: l derivative slots, then the projected slot
    let mut base = Expansion::default();
    base.push(
        1.0,
        JetAt::U,
        (0..l).map(|s| Arg::pos(Source::Basis(s), MultiIndex::ZERO)).collect(),
        Arg::pos(Source::Basis(l), MultiIndex::ZERO),
    );
    let mut residuals = Vec::new();
    for grid in levels(&u.grid)? {
        let s = restrict(&state, &grid);
        let mut sup: f64 = 0.0;
        let mut basis = vec![0usize; l + 1];
        let combos = lt.pow(l as u32 + 1);
        for code in 0..combos {
            let mut c = code;
            for b in basis.iter_mut() {
                *b = c % lt;
                c /= lt;
            }
            // composed field x ↦ d^lP_{u(x)}(e.., e) sampled on the grid
            let mut composed = Field::zeros(&grid, lt);
            let (mut p, mut out) = (vec![0.0; lt], vec![0.0; lt]);
            let e: Vec<Vec<f64>> = basis
                .iter()
                .map(|&j| (0..lt).map(|k| if k == j { 1.0 } else { 0.0 }).collect())
                .collect();
            for i in 0..grid.len() {
                s.u.point_into(i, &mut p);
                let dirs: Vec<&[f64]> = e[..l].iter().map(|x| x.as_slice()).collect();
                target.apply_jet(&p, &dirs, &e[l], &mut out)?;
                composed.set_point(i, &out);
            }
            for gamma in multi_indices(dim, m) {
                let lhs = composed.derivative(&gamma)?;
                let mut fields = ArgFields::new(&s, None);
                let rhs = evaluate_expansion(target, &base.differentiate_multi(&gamma), &mut fields, &basis)?;
                sup = sup.max(lhs.max_abs_diff(&rhs));
            }
        }
        residuals.push((grid.points(), sup));
    }
    Ok(ExpansionCheckReport { check: format!("leibniz l={l}"), m, residuals })
}

/// Compare `∂^γ(N_ε(u) − N_ε(v))` for all `|γ| = m` against the telescoped
/// expansion in `w = u − v`.
pub fn check_difference_expansion(
    target: &TargetManifold,
    u: &State,
    v: &State,
    m: usize,
    epsilon: f64,
) -> Result<ExpansionCheckReport> {
    check_epsilon(epsilon)?;
    if m > 1 {
        return Err(Error::UnsupportedOrder(m));
    }
    u.u.check_same_shape(&v.u)?;
    let dim = u.grid().dim();
    let telescoped = nonlinearity_expansion(dim, epsilon).telescope();
    let mut residuals = Vec::new();
    for grid in levels(u.grid())? {
        let (su, sv) = (restrict(u, &grid), restrict(v, &grid));
        let nl = Nonlinearity::new(target, &grid, DEFAULT_DEALIAS_FACTOR)?;
        let direct = nl.regularized(&su.u, &su.u_t, epsilon)?.sub(&nl.regularized(&sv.u, &sv.u_t, epsilon)?);
        let mut sup: f64 = 0.0;
        for gamma in multi_indices(dim, m) {
            let lhs = direct.derivative(&gamma)?;
            let mut fields = ArgFields::new(&su, Some(&sv));
            let rhs = evaluate_expansion(target, &telescoped.differentiate_multi(&gamma), &mut fields, &[])?;
            sup = sup.max(lhs.max_abs_diff(&rhs));
        }
        residuals.push((grid.points(), sup));
    }
    let check = if epsilon == 0.0 { "difference".to_string() } else { format!("difference eps={epsilon}") };
    Ok(ExpansionCheckReport { check, m, residuals })
}
