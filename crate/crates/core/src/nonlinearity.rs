//! Right-hand side of the constrained plate equation.
//!
//! For `u` with values in `N` the normal part of `u_tt + Δ²u` is expressed
//! through projector jets contracted with spatial derivatives of `u`:
//!
//! ```text
//! (I − P_u) u_tt  = dP[u_t; u_t]
//! (I − P_u) Δ²u  = Σ d³P[u_α, u_β, u_β; u_α]
//!                + Σ (d²P[u_α, Δu; u_α] + d²P[u_α, u_α; Δu])
//!                + 2 Σ (d²P[u_αβ, u_β; u_α] + d²P[u_α, u_β; u_αβ])
//!                + Σ (dP[∂_αΔu; u_α] + 3 dP[u_α; ∂_αΔu])
//!                + 2 Σ dP[u_αβ; u_αβ] + dP[Δu; Δu]
//! ```
//!
//! where `d^jP[w_1..w_j; v]` fills the derivative slots with `w` and the
//! projected slot with `v`. Keeping the slots apart makes the identity exact
//! for any extension of the projector off `N`; when the jet is symmetric in
//! all slots the groups collapse to the familiar seven terms with
//! coefficients 1, 1, 4, 2, 2, 4, 1.
//!
//! Pointwise products are evaluated on a zero-padded grid and truncated back.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::TargetManifold;
use crate::grid::{Field, MultiIndex, PeriodicGrid, Spectrum};

/// Oversampling used by the free-standing evaluation functions.
pub const DEFAULT_DEALIAS_FACTOR: f64 = 2.0;

const CHUNK_POINTS: usize = 512;

/// The seven families of the expansion, each a field on the working grid.
#[derive(Debug, Clone)]
pub struct NonlinearityTerms {
    /// `dP(u_t, u_t)`
    pub velocity: Field,
    /// `dP(Δu, Δu)`
    pub laplacian: Field,
    /// `4 dP(∇u, ∇Δu)`
    pub gradient_laplacian: Field,
    /// `2 dP(∇²u, ∇²u)`
    pub hessian: Field,
    /// `2 d²P(∇u, ∇u, Δu)`
    pub second_laplacian: Field,
    /// `4 d²P(∇u, ∇u, ∇²u)`
    pub second_hessian: Field,
    /// `d³P(∇u, ∇u, ∇u, ∇u)`
    pub third: Field,
    pub sum: Field,
}

impl NonlinearityTerms {
    pub fn named(&self) -> [(&'static str, &Field); 7] {
        [
            ("velocity", &self.velocity),
            ("laplacian", &self.laplacian),
            ("gradient_laplacian", &self.gradient_laplacian),
            ("hessian", &self.hessian),
            ("second_laplacian", &self.second_laplacian),
            ("second_hessian", &self.second_hessian),
            ("third", &self.third),
        ]
    }

    /// The six position-only families in summation order.
    pub fn spatial(&self) -> [&Field; 6] {
        [
            &self.laplacian,
            &self.gradient_laplacian,
            &self.hessian,
            &self.second_laplacian,
            &self.second_hessian,
            &self.third,
        ]
    }
}

/// Point-major samples: `data[i * width + c]`.
#[derive(Debug, Clone)]
struct Samples {
    width: usize,
    data: Vec<f64>,
}

impl Samples {
    fn from_field(f: &Field) -> Self {
        let width = f.num_components();
        let mut data = vec![0.0; f.len() * width];
        for (c, comp) in f.comps.iter().enumerate() {
            for (i, &x) in comp.iter().enumerate() {
                data[i * width + c] = x;
            }
        }
        Self { width, data }
    }

    #[inline]
    fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Derivatives of a position field sampled on the fine grid.
#[derive(Debug, Clone)]
struct PositionSamples {
    u: Samples,
    grad: Vec<Samples>,
    /// Upper triangle `α ≤ β`, row-major.
    hess: Vec<Samples>,
    lap: Samples,
    grad_lap: Vec<Samples>,
    dim: usize,
}

impl PositionSamples {
    #[inline]
    fn hess(&self, a: usize, b: usize) -> &Samples {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        &self.hess[a * self.dim - a * (a + 1) / 2 + b]
    }
}

/// Position-dependent data reused while only the velocity changes.
#[derive(Debug, Clone)]
pub struct FrozenPosition {
    samples: Option<PositionSamples>,
    spatial: [Field; 6],
    spatial_sum: Field,
}

impl FrozenPosition {
    /// `(I − P_u) Δ²u` assembled from the six position families.
    pub fn spatial_sum(&self) -> &Field {
        &self.spatial_sum
    }
}

/// Evaluator bound to a target, a working grid and an oversampling factor.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    target: TargetManifold,
    grid: PeriodicGrid,
    fine: PeriodicGrid,
}

impl Nonlinearity {
    pub fn new(target: &TargetManifold, grid: &PeriodicGrid, dealias_factor: f64) -> Result<Self> {
        if !(dealias_factor >= 1.0 && dealias_factor.is_finite()) {
            return Err(Error::Config(format!("dealias factor must be >= 1, got {dealias_factor}")));
        }
        let m = grid.points();
        let want = ((dealias_factor * m as f64) - 1e-9).ceil() as usize;
        let fine_m = want.next_power_of_two().max(m);
        let fine = if fine_m == m { grid.clone() } else { grid.with_points(fine_m)? };
        Ok(Self { target: *target, grid: grid.clone(), fine })
    }

    pub fn target(&self) -> &TargetManifold {
        &self.target
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// Grid on which pointwise products are formed.
    pub fn fine_grid(&self) -> &PeriodicGrid {
        &self.fine
    }

    fn check_field(&self, f: &Field) -> Result<()> {
        if f.grid != self.grid || f.num_components() != self.target.ambient_dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} components on {:?}, got {} on {:?}",
                self.target.ambient_dim(),
                self.grid,
                f.num_components(),
                f.grid
            )));
        }
        Ok(())
    }

    fn to_fine(&self, s: &Spectrum) -> Field {
        if self.fine == self.grid {
            s.to_field()
        } else {
            s.resample(&self.fine).to_field()
        }
    }

    fn to_coarse(&self, f: Field) -> Field {
        if self.fine == self.grid {
            f
        } else {
            f.spectrum().resample(&self.grid).to_field()
        }
    }

    fn position_samples(&self, u: &Field) -> Result<PositionSamples> {
        let n = self.grid.dim();
        let spec = u.spectrum();
        let sample = |alpha: MultiIndex| -> Result<Samples> {
            Ok(Samples::from_field(&self.to_fine(&spec.derivative(&alpha)?)))
        };
        let grad = (0..n).map(|a| sample(MultiIndex::axis(a, 1))).collect::<Result<Vec<_>>>()?;
        let mut hess = Vec::new();
        for a in 0..n {
            for b in a..n {
                hess.push(sample(MultiIndex::axis(a, 1).bump(b))?);
            }
        }
        let lap_spec = spectral_laplacian(&spec);
        let lap = Samples::from_field(&self.to_fine(&lap_spec));
        let grad_lap = (0..n)
            .map(|a| Ok(Samples::from_field(&self.to_fine(&lap_spec.derivative(&MultiIndex::axis(a, 1))?))))
            .collect::<Result<Vec<_>>>()?;
        let u_fine = Samples::from_field(&self.to_fine(&spec));
        Ok(PositionSamples { u: u_fine, grad, hess, lap, grad_lap, dim: n })
    }

    /// Precompute every position-only quantity of `u`.
    pub fn freeze(&self, u: &Field) -> Result<FrozenPosition> {
        self.check_field(u)?;
        let l = self.target.ambient_dim();
        if self.target.is_flat() {
            let z = Field::zeros(&self.grid, l);
            return Ok(FrozenPosition {
                samples: None,
                spatial: std::array::from_fn(|_| z.clone()),
                spatial_sum: z,
            });
        }
        let s = self.position_samples(u)?;
        let target = self.target;
        let fine = pointwise(&self.fine, l, 6, |i, scratch, out| {
            spatial_families(&target, &s, i, scratch, out)
        })?;
        let spatial: [Field; 6] = fine
            .into_iter()
            .map(|f| self.to_coarse(f))
            .collect::<Vec<_>>()
            .try_into()
            .expect("six families");
        let spatial_sum = sum_fields(spatial.iter());
        Ok(FrozenPosition { samples: Some(s), spatial, spatial_sum })
    }

    /// `a · dP[u_t; u_t] + b · (I − P_u) Δu_t`, the latter in jet form.
    fn velocity_part(&self, frozen: &FrozenPosition, u_t: &Field, a: f64, b: f64) -> Result<Field> {
        self.check_field(u_t)?;
        let l = self.target.ambient_dim();
        let Some(s) = &frozen.samples else {
            return Ok(Field::zeros(&self.grid, l));
        };
        let n = self.grid.dim();
        let spec = u_t.spectrum();
        let v = Samples::from_field(&self.to_fine(&spec));
        let grad_v = if b != 0.0 {
            (0..n)
                .map(|k| Ok(Samples::from_field(&self.to_fine(&spec.derivative(&MultiIndex::axis(k, 1))?))))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let target = self.target;
        let mut fine = pointwise(&self.fine, l, 1, |i, scratch, out| {
            let p = s.u.at(i);
            let vi = v.at(i);
            if a != 0.0 {
                scratch.add_jet(&target, p, &[vi], vi, a, out)?;
            }
            if b != 0.0 {
                for k in 0..n {
                    let uk = s.grad[k].at(i);
                    scratch.add_jet(&target, p, &[uk, uk], vi, b, out)?;
                    scratch.add_jet(&target, p, &[uk], grad_v[k].at(i), 2.0 * b, out)?;
                }
                scratch.add_jet(&target, p, &[s.lap.at(i)], vi, b, out)?;
            }
            Ok(())
        })?;
        Ok(self.to_coarse(fine.pop().expect("one field")))
    }

    /// All seven families at `(u, u_t)`.
    pub fn terms(&self, u: &Field, u_t: &Field) -> Result<NonlinearityTerms> {
        let frozen = self.freeze(u)?;
        let velocity = self.velocity_part(&frozen, u_t, 1.0, 0.0)?;
        let sum = frozen.spatial_sum.add(&velocity);
        let [laplacian, gradient_laplacian, hessian, second_laplacian, second_hessian, third] =
            frozen.spatial;
        Ok(NonlinearityTerms {
            velocity,
            laplacian,
            gradient_laplacian,
            hessian,
            second_laplacian,
            second_hessian,
            third,
            sum,
        })
    }

    /// `N_ε(u, u_t)` for a frozen position.
    pub fn regularized_frozen(&self, frozen: &FrozenPosition, u_t: &Field, eps: f64) -> Result<Field> {
        check_epsilon(eps)?;
        let velocity = self.velocity_part(frozen, u_t, 1.0, -eps)?;
        Ok(frozen.spatial_sum.add(&velocity))
    }

    pub fn regularized(&self, u: &Field, u_t: &Field, eps: f64) -> Result<Field> {
        check_epsilon(eps)?;
        self.regularized_frozen(&self.freeze(u)?, u_t, eps)
    }

    /// `(I − P_u) Δu_t` written through jets: `d²P[∇u, ∇u; u_t] + 2 dP[∇u; ∇u_t] + dP[Δu; u_t]`.
    pub fn viscous_correction(&self, u: &Field, u_t: &Field) -> Result<Field> {
        self.velocity_part(&self.freeze(u)?, u_t, 0.0, 1.0)
    }

    /// `P_u(A · d²P[∇u, ·; ∇u]) + P_u(div(A · dP[·; ∇u]))` with `A = dP[∇u; ∇u]`.
    pub fn intrinsic_correction(&self, u: &Field) -> Result<Field> {
        self.check_field(u)?;
        let l = self.target.ambient_dim();
        if self.target.is_flat() {
            return Ok(Field::zeros(&self.grid, l));
        }
        let n = self.grid.dim();
        let s = self.position_samples(u)?;
        let target = self.target;
        // outputs: b, then c_α for each axis
        let mut parts = pointwise(&self.fine, l, 1 + n, |i, scratch, out| {
            let p = s.u.at(i);
            let mut a_vec = vec![0.0; l];
            for k in 0..n {
                let uk = s.grad[k].at(i);
                scratch.add_jet(&target, p, &[uk], uk, 1.0, &mut a_vec)?;
            }
            let mut e = vec![0.0; l];
            let mut tmp = vec![0.0; l];
            for j in 0..l {
                e[j] = 1.0;
                for k in 0..n {
                    let uk = s.grad[k].at(i);
                    target.apply_jet(p, &[uk, &e], uk, &mut tmp)?;
                    out[j] += crate::geometry::dot(&a_vec, &tmp);
                    target.apply_jet(p, &[&e], uk, &mut tmp)?;
                    out[(1 + k) * l + j] += crate::geometry::dot(&a_vec, &tmp);
                }
                e[j] = 0.0;
            }
            Ok(())
        })?;
        let cs = parts.split_off(1);
        let mut total = parts.pop().expect("b field");
        for (k, c) in cs.iter().enumerate() {
            total = total.add(&c.derivative(&MultiIndex::axis(k, 1))?);
        }
        let total = Samples::from_field(&total);
        let mut projected = pointwise(&self.fine, l, 1, |i, _, out| {
            target.project_into(s.u.at(i), total.at(i), out)
        })?;
        Ok(self.to_coarse(projected.pop().expect("one field")))
    }

    /// `sup |P_u N(u, u_t)|` over the working grid.
    pub fn orthogonality_residual(&self, u: &Field, u_t: &Field) -> Result<f64> {
        let n = self.terms(u, u_t)?.sum;
        let l = self.target.ambient_dim();
        let (mut p, mut v, mut out) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
        let mut sup: f64 = 0.0;
        for i in 0..self.grid.len() {
            u.point_into(i, &mut p);
            n.point_into(i, &mut v);
            self.target.project_into(&p, &v, &mut out)?;
            sup = sup.max(crate::geometry::norm(&out));
        }
        Ok(sup)
    }

    /// Sup-norm gaps in the three normal-part identities for `u_tt`, `Δu` and `Δ²u`.
    ///
    /// The time identity needs a second time derivative and is skipped without one.
    pub fn chain_identity_residual(
        &self,
        u: &Field,
        u_t: &Field,
        u_tt: Option<&Field>,
    ) -> Result<ChainResiduals> {
        self.check_field(u)?;
        self.check_field(u_t)?;
        let l = self.target.ambient_dim();
        let n = self.grid.dim();
        let frozen = self.freeze(u)?;
        let normal_gap = |lhs_field: &Field, rhs: &Field| -> Result<f64> {
            let (mut p, mut v, mut out) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
            let mut sup: f64 = 0.0;
            for i in 0..self.grid.len() {
                u.point_into(i, &mut p);
                lhs_field.point_into(i, &mut v);
                self.target.normal_part_into(&p, &v, &mut out)?;
                for (o, r) in out.iter().zip(&rhs.comps) {
                    sup = sup.max((o - r[i]).abs());
                }
            }
            Ok(sup)
        };
        let time = match u_tt {
            Some(u_tt) => {
                self.check_field(u_tt)?;
                let rhs = self.velocity_part(&frozen, u_t, 1.0, 0.0)?;
                Some(normal_gap(u_tt, &rhs)?)
            }
            None => None,
        };
        let grad_rhs = match &frozen.samples {
            None => Field::zeros(&self.grid, l),
            Some(s) => {
                let target = self.target;
                let mut f = pointwise(&self.fine, l, 1, |i, scratch, out| {
                    for k in 0..n {
                        let uk = s.grad[k].at(i);
                        scratch.add_jet(&target, s.u.at(i), &[uk], uk, 1.0, out)?;
                    }
                    Ok(())
                })?;
                self.to_coarse(f.pop().expect("one field"))
            }
        };
        let laplacian = normal_gap(&u.laplacian(), &grad_rhs)?;
        let bilaplacian = normal_gap(&u.bilaplacian(), &frozen.spatial_sum)?;
        Ok(ChainResiduals { time, laplacian, bilaplacian })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainResiduals {
    pub time: Option<f64>,
    pub laplacian: f64,
    pub bilaplacian: f64,
}

pub fn check_epsilon(eps: f64) -> Result<()> {
    if (0.0..1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::EpsilonOutOfRange(eps))
    }
}

pub fn evaluate_nonlinearity(target: &TargetManifold, u: &Field, u_t: &Field) -> Result<NonlinearityTerms> {
    Nonlinearity::new(target, &u.grid, DEFAULT_DEALIAS_FACTOR)?.terms(u, u_t)
}

pub fn evaluate_regularized_nonlinearity(
    target: &TargetManifold,
    u: &Field,
    u_t: &Field,
    eps: f64,
) -> Result<Field> {
    check_epsilon(eps)?;
    Nonlinearity::new(target, &u.grid, DEFAULT_DEALIAS_FACTOR)?.regularized(u, u_t, eps)
}

pub fn intrinsic_correction(target: &TargetManifold, u: &Field) -> Result<Field> {
    Nonlinearity::new(target, &u.grid, DEFAULT_DEALIAS_FACTOR)?.intrinsic_correction(u)
}

pub fn orthogonality_residual(target: &TargetManifold, u: &Field, u_t: &Field) -> Result<f64> {
    Nonlinearity::new(target, &u.grid, DEFAULT_DEALIAS_FACTOR)?.orthogonality_residual(u, u_t)
}

pub fn chain_identity_residual(
    target: &TargetManifold,
    u: &Field,
    u_t: &Field,
    u_tt: Option<&Field>,
) -> Result<ChainResiduals> {
    Nonlinearity::new(target, &u.grid, DEFAULT_DEALIAS_FACTOR)?.chain_identity_residual(u, u_t, u_tt)
}

fn spectral_laplacian(s: &Spectrum) -> Spectrum {
    let g = s.grid.clone();
    s.map_symbol(|i| num_complex::Complex64::new(-g.wavenumber_sq(i), 0.0))
}

fn sum_fields<'a>(mut fields: impl Iterator<Item = &'a Field>) -> Field {
    let first = fields.next().expect("at least one field").clone();
    fields.fold(first, |acc, f| acc.add(f))
}

struct Scratch {
    tmp: Vec<f64>,
}

impl Scratch {
    #[inline]
    fn add_jet(
        &mut self,
        target: &TargetManifold,
        p: &[f64],
        dirs: &[&[f64]],
        v: &[f64],
        coef: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        target.apply_jet(p, dirs, v, &mut self.tmp)?;
        for (a, t) in acc.iter_mut().zip(&self.tmp) {
            *a += coef * t;
        }
        Ok(())
    }
}

/// Evaluate `f` at every point of `grid`; `f` accumulates `width` vectors of
/// length `l` into a zeroed output. Returns one field per vector slot.
fn pointwise<F>(grid: &PeriodicGrid, l: usize, width: usize, f: F) -> Result<Vec<Field>>
where
    F: Fn(usize, &mut Scratch, &mut [f64]) -> Result<()> + Sync,
{
    let stride = width * l;
    let mut data = vec![0.0; grid.len() * stride];
    data.par_chunks_mut(CHUNK_POINTS * stride).enumerate().try_for_each_init(
        || Scratch { tmp: vec![0.0; l] },
        |scratch, (chunk, block)| -> Result<()> {
            for (j, out) in block.chunks_mut(stride).enumerate() {
                f(chunk * CHUNK_POINTS + j, scratch, out)?;
            }
            Ok(())
        },
    )?;
    let mut fields = vec![Field::zeros(grid, l); width];
    for (i, point) in data.chunks(stride).enumerate() {
        for (w, field) in fields.iter_mut().enumerate() {
            for c in 0..l {
                field.comps[c][i] = point[w * l + c];
            }
        }
    }
    Ok(fields)
}

/// Six position families at point `i`, written as consecutive `L`-blocks.
fn spatial_families(
    target: &TargetManifold,
    s: &PositionSamples,
    i: usize,
    scratch: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let l = target.ambient_dim();
    let n = s.dim;
    let p = s.u.at(i);
    let lap = s.lap.at(i);
    let (lap_block, rest) = out.split_at_mut(l);
    let (grad_lap_block, rest) = rest.split_at_mut(l);
    let (hess_block, rest) = rest.split_at_mut(l);
    let (second_lap_block, rest) = rest.split_at_mut(l);
    let (second_hess_block, third_block) = rest.split_at_mut(l);

    scratch.add_jet(target, p, &[lap], lap, 1.0, lap_block)?;
    for a in 0..n {
        let ua = s.grad[a].at(i);
        let gla = s.grad_lap[a].at(i);
        scratch.add_jet(target, p, &[gla], ua, 1.0, grad_lap_block)?;
        scratch.add_jet(target, p, &[ua], gla, 3.0, grad_lap_block)?;
        scratch.add_jet(target, p, &[ua, lap], ua, 1.0, second_lap_block)?;
        scratch.add_jet(target, p, &[ua, ua], lap, 1.0, second_lap_block)?;
        for b in 0..n {
            let ub = s.grad[b].at(i);
            let uab = s.hess(a, b).at(i);
            scratch.add_jet(target, p, &[uab], uab, 2.0, hess_block)?;
            scratch.add_jet(target, p, &[uab, ub], ua, 2.0, second_hess_block)?;
            scratch.add_jet(target, p, &[ua, ub], uab, 2.0, second_hess_block)?;
            scratch.add_jet(target, p, &[ua, ub, ub], ua, 1.0, third_block)?;
        }
    }
    Ok(())
}
