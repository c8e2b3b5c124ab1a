//! Uniform grids on the flat torus and ℝ^L-valued sampled fields.
//!
//! Fourier coefficients are grid means, `f̂_ξ = V⁻¹ ∫ f e^{−iξ·x} dx`, so a
//! single mode `sin x` has coefficients `∓i/2` independent of the resolution.
//! Sobolev norms use the weight `(1 + |ξ|²)^s` and carry the torus volume `V`:
//!
//! ```text
//! ‖f‖²_{H^s} = V Σ_ξ (1 + |ξ|²)^s |f̂_ξ|²
//! ```
//!
//! Data layout is row-major over the axes (the last axis varies fastest); a
//! field stores one such array per ambient component.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default derivative budget, enough for `∇^k` with `k = 4` plus two extra orders.
pub const DEFAULT_MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    pub periods: Vec<f64>,
}

#[derive(Clone)]
pub struct PeriodicGrid {
    inner: Arc<GridInner>,
}

struct GridInner {
    dim: usize,
    m: usize,
    periods: [f64; 2],
    max_order: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Signed integer wavenumber per axis index.
    kint: Vec<i64>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("dim", &self.inner.dim)
            .field("points", &self.inner.m)
            .field("periods", &self.periods())
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.m == other.inner.m
                && self.periods() == other.periods())
    }
}

impl PeriodicGrid {
    pub fn new(dim: usize, points: usize, periods: &[f64]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {points}"
            )));
        }
        let periods = match periods.len() {
            1 => [periods[0]; 2],
            2 if dim == 2 => [periods[0], periods[1]],
            n => return Err(Error::InvalidGrid(format!("expected 1 or {dim} periods, got {n}"))),
        };
        if periods.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidGrid(format!("periods must be positive: {periods:?}")));
        }
        Ok(Self::build(dim, points, periods, DEFAULT_MAX_ORDER))
    }

    /// 2π-periodic grid with `points` per axis.
    pub fn standard(dim: usize, points: usize) -> Result<Self> {
        Self::new(dim, points, &[2.0 * PI])
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(spec.dim, spec.points, &spec.periods)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim(),
            points: self.points(),
            periods: self.periods().to_vec(),
        }
    }

    fn build(dim: usize, m: usize, periods: [f64; 2], max_order: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let half = (m / 2) as i64;
        let kint = (0..m as i64).map(|j| if j < half { j } else { j - m as i64 }).collect();
        Self {
            inner: Arc::new(GridInner { dim, m, periods, max_order, forward, inverse, kint }),
        }
    }

    pub fn with_max_order(&self, max_order: usize) -> Self {
        Self::build(self.dim(), self.points(), self.inner.periods, max_order)
    }

    /// Same torus with `points` per axis.
    pub fn with_points(&self, points: usize) -> Result<Self> {
        let g = Self::new(self.dim(), points, self.periods())?;
        Ok(g.with_max_order(self.max_order()))
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn points(&self) -> usize {
        self.inner.m
    }

    pub fn max_order(&self) -> usize {
        self.inner.max_order
    }

    pub fn periods(&self) -> &[f64] {
        &self.inner.periods[..self.inner.dim]
    }

    pub fn len(&self) -> usize {
        self.inner.m.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.inner.periods[axis] / self.inner.m as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        self.periods().iter().product()
    }

    /// Per-axis lattice indices of a flat index.
    pub fn axis_indices(&self, flat: usize) -> [usize; 2] {
        let m = self.inner.m;
        if self.inner.dim == 1 {
            [flat, 0]
        } else {
            [flat / m, flat % m]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.inner.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.inner.m + idx[1]
        }
    }

    pub fn coordinates(&self, flat: usize) -> [f64; 2] {
        let idx = self.axis_indices(flat);
        let mut x = [0.0; 2];
        for a in 0..self.dim() {
            x[a] = idx[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Signed integer wavenumber per axis at a flat spectral index.
    pub fn integer_wavenumber(&self, flat: usize) -> [i64; 2] {
        let idx = self.axis_indices(flat);
        let mut k = [0; 2];
        for a in 0..self.dim() {
            k[a] = self.inner.kint[idx[a]];
        }
        k
    }

    /// Physical wavenumber `ξ` at a flat spectral index.
    pub fn wavenumber(&self, flat: usize) -> [f64; 2] {
        let k = self.integer_wavenumber(flat);
        let mut xi = [0.0; 2];
        for a in 0..self.dim() {
            xi[a] = 2.0 * PI * k[a] as f64 / self.inner.periods[a];
        }
        xi
    }

    pub fn wavenumber_sq(&self, flat: usize) -> f64 {
        let xi = self.wavenumber(flat);
        xi[0] * xi[0] + xi[1] * xi[1]
    }

    /// True when the spectral index sits on the Nyquist line of `axis`.
    pub fn is_nyquist(&self, flat: usize, axis: usize) -> bool {
        self.axis_indices(flat)[axis] == self.inner.m / 2
    }

    /// Mean-normalized Fourier coefficients of real samples.
    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.len());
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.inner.forward);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    /// Real part of the synthesis `Σ_ξ c_ξ e^{iξ·x}`.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, &self.inner.inverse);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.inner.m;
        if self.inner.dim == 1 {
            plan.process(buf);
            return;
        }
        // rows are contiguous
        plan.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..m {
            for i in 0..m {
                col[i] = buf[i * m + j];
            }
            plan.process(&mut col);
            for i in 0..m {
                buf[i * m + j] = col[i];
            }
        }
    }
}

/// Non-negative derivative orders per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MultiIndex(pub [usize; 2]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0, 0]);

    pub fn new(orders: &[usize]) -> Self {
        let mut a = [0; 2];
        a[..orders.len()].copy_from_slice(orders);
        MultiIndex(a)
    }

    pub fn axis(axis: usize, order: usize) -> Self {
        let mut a = [0; 2];
        a[axis] = order;
        MultiIndex(a)
    }

    pub fn order(&self) -> usize {
        self.0[0] + self.0[1]
    }

    pub fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex([self.0[0] + other.0[0], self.0[1] + other.0[1]])
    }

    pub fn bump(&self, axis: usize) -> MultiIndex {
        let mut a = self.0;
        a[axis] += 1;
        MultiIndex(a)
    }
}

/// Fourier coefficients of every component of a field.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub grid: PeriodicGrid,
    pub comps: Vec<Vec<Complex64>>,
}

impl Spectrum {
    pub fn to_field(&self) -> Field {
        Field {
            grid: self.grid.clone(),
            comps: self.comps.iter().map(|c| self.grid.inverse(c)).collect(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.comps.len()
    }

    /// Multiply every coefficient by `symbol(flat_index)`.
    pub fn map_symbol(&self, symbol: impl Fn(usize) -> Complex64) -> Spectrum {
        let weights: Vec<Complex64> = (0..self.grid.len()).map(symbol).collect();
        Spectrum {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().zip(&weights).map(|(a, w)| a * w).collect())
                .collect(),
        }
    }

    /// Spectral `∂^α`; the Nyquist line of every axis with odd order is zeroed.
    pub fn derivative(&self, alpha: &MultiIndex) -> Result<Spectrum> {
        let order = alpha.order();
        if order > self.grid.max_order() {
            return Err(Error::OrderTooHigh { order, max: self.grid.max_order() });
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let grid = &self.grid;
        Ok(self.map_symbol(|i| derivative_symbol(grid, i, alpha)))
    }

    /// Zero-pad or truncate to another resolution of the same torus.
    ///
    /// Padding splits a Nyquist coefficient evenly between `±M/2`, which keeps
    /// trigonometric interpolation exact; truncation drops the target Nyquist line.
    pub fn resample(&self, target: &PeriodicGrid) -> Spectrum {
        let src = &self.grid;
        let (ms, mt) = (src.points() as i64, target.points() as i64);
        let dim = src.dim();
        let pad = mt > ms;
        // target index along one axis, or None when the mode is dropped
        let wrap = |k: i64| -> Option<usize> {
            if k.abs() > mt / 2 || (!pad && k.abs() == mt / 2) {
                None
            } else {
                Some(k.rem_euclid(mt) as usize)
            }
        };
        let mut comps = vec![vec![Complex64::new(0.0, 0.0); target.len()]; self.comps.len()];
        let mut images: [([i64; 2], f64); 4] = [([0, 0], 0.0); 4];
        for i in 0..src.len() {
            let k = src.integer_wavenumber(i);
            images[0] = (k, 1.0);
            let mut count = 1;
            if pad {
                for a in 0..dim {
                    if src.is_nyquist(i, a) {
                        for j in 0..count {
                            let (kk, w) = images[j];
                            let mut flipped = kk;
                            flipped[a] = -kk[a];
                            images[j] = (kk, 0.5 * w);
                            images[count + j] = (flipped, 0.5 * w);
                        }
                        count *= 2;
                    }
                }
            }
            for &(kk, w) in &images[..count] {
                let idx0 = wrap(kk[0]);
                let idx1 = if dim == 2 { wrap(kk[1]) } else { Some(0) };
                let (Some(a), Some(b)) = (idx0, idx1) else { continue };
                let t = target.flat_index([a, b]);
                for (dst, s) in comps.iter_mut().zip(&self.comps) {
                    dst[t] += s[i] * w;
                }
            }
        }
        Spectrum { grid: target.clone(), comps }
    }
}

fn derivative_symbol(grid: &PeriodicGrid, i: usize, alpha: &MultiIndex) -> Complex64 {
    let xi = grid.wavenumber(i);
    let mut s = Complex64::new(1.0, 0.0);
    for a in 0..grid.dim() {
        let n = alpha.0[a];
        if n == 0 {
            continue;
        }
        if n % 2 == 1 && grid.is_nyquist(i, a) {
            return Complex64::new(0.0, 0.0);
        }
        s *= Complex64::new(0.0, xi[a]).powu(n as u32);
    }
    s
}

/// Real ℝ^L-valued samples on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: PeriodicGrid,
    /// One sample array per ambient component.
    pub comps: Vec<Vec<f64>>,
}

impl Field {
    pub fn zeros(grid: &PeriodicGrid, components: usize) -> Self {
        Self { grid: grid.clone(), comps: vec![vec![0.0; grid.len()]; components] }
    }

    pub fn constant(grid: &PeriodicGrid, value: &[f64]) -> Self {
        Self { grid: grid.clone(), comps: value.iter().map(|&v| vec![v; grid.len()]).collect() }
    }

    /// Samples `f(x)` with `f` writing the `components` values at `x`.
    pub fn from_fn(
        grid: &PeriodicGrid,
        components: usize,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Self {
        let mut field = Self::zeros(grid, components);
        let mut buf = vec![0.0; components];
        for i in 0..grid.len() {
            let x = grid.coordinates(i);
            f(&x[..grid.dim()], &mut buf);
            for (c, &v) in buf.iter().enumerate() {
                field.comps[c][i] = v;
            }
        }
        field
    }

    pub fn from_components(grid: &PeriodicGrid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::ShapeMismatch(format!(
                "component length differs from grid size {}",
                grid.len()
            )));
        }
        Ok(Self { grid: grid.clone(), comps })
    }

    pub fn num_components(&self) -> usize {
        self.comps.len()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point_into(&self, i: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c[i];
        }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[i]).collect()
    }

    pub fn set_point(&mut self, i: usize, value: &[f64]) {
        for (c, &v) in self.comps.iter_mut().zip(value) {
            c[i] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.grid == other.grid && self.num_components() == other.num_components()
    }

    pub fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} components on {:?} vs {} components on {:?}",
                self.num_components(),
                self.grid,
                other.num_components(),
                other.grid
            )))
        }
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum {
            grid: self.grid.clone(),
            comps: self.comps.iter().map(|c| self.grid.forward(c)).collect(),
        }
    }

    pub fn derivative(&self, alpha: &MultiIndex) -> Result<Field> {
        if alpha.order() > self.grid.max_order() {
            return Err(Error::OrderTooHigh { order: alpha.order(), max: self.grid.max_order() });
        }
        Ok(self.spectrum().derivative(alpha)?.to_field())
    }

    pub fn laplacian(&self) -> Field {
        let g = &self.grid;
        self.spectrum().map_symbol(|i| Complex64::new(-g.wavenumber_sq(i), 0.0)).to_field()
    }

    pub fn bilaplacian(&self) -> Field {
        let g = &self.grid;
        self.spectrum()
            .map_symbol(|i| Complex64::new(g.wavenumber_sq(i).powi(2), 0.0))
            .to_field()
    }

    /// `V Σ_ξ w(|ξ|²) |f̂_ξ|²` summed over components.
    fn weighted_norm_sq(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let spec = self.spectrum();
        let w: Vec<f64> = (0..self.grid.len()).map(|i| weight(self.grid.wavenumber_sq(i))).collect();
        self.grid.volume()
            * spec
                .comps
                .iter()
                .map(|c| c.iter().zip(&w).map(|(a, w)| w * a.norm_sqr()).sum::<f64>())
                .sum::<f64>()
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.weighted_norm_sq(|k2| (1.0 + k2).powf(s)).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// `‖∇^k f‖²_{L²}`, the sum over all ordered `k`-fold partial derivatives.
    pub fn grad_power_norm_sq(&self, k: usize) -> f64 {
        self.weighted_norm_sq(|k2| k2.powi(k as i32))
    }

    /// `‖∇f‖_{H^s}`.
    pub fn gradient_sobolev_norm(&self, s: f64) -> f64 {
        self.weighted_norm_sq(|k2| k2 * (1.0 + k2).powf(s)).sqrt()
    }

    /// `⟨∇^k f, ∇^k g⟩_{L²}`.
    pub fn grad_power_inner(&self, other: &Field, k: usize) -> f64 {
        let (a, b) = (self.spectrum(), other.spectrum());
        let w: Vec<f64> =
            (0..self.grid.len()).map(|i| self.grid.wavenumber_sq(i).powi(k as i32)).collect();
        self.grid.volume()
            * a.comps
                .iter()
                .zip(&b.comps)
                .map(|(x, y)| {
                    x.iter().zip(y).zip(&w).map(|((p, q), w)| w * (p * q.conj()).re).sum::<f64>()
                })
                .sum::<f64>()
    }

    /// Max over the grid of the pointwise Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.comps.iter().map(|c| c[i] * c[i]).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }

    pub fn heat_mollify(&self, delta: f64) -> Result<Field> {
        if delta < 0.0 || delta.is_nan() {
            return Err(Error::NegativeDelta(delta));
        }
        if delta == 0.0 {
            return Ok(self.clone());
        }
        let g = &self.grid;
        Ok(self
            .spectrum()
            .map_symbol(|i| Complex64::new((-delta * g.wavenumber_sq(i)).exp(), 0.0))
            .to_field())
    }

    /// Forward difference quotient `(f(x + h e_axis) − f(x)) / h` with periodic wrap.
    pub fn difference_quotient(&self, h: f64, axis: usize) -> Result<Field> {
        let shift = lattice_shift(&self.grid, h, axis)?;
        let shifted = self.shifted(axis, shift);
        Ok(shifted.sub(self).scaled(1.0 / h))
    }

    /// `f(· + shift·Δx e_axis)`.
    pub fn shifted(&self, axis: usize, shift: i64) -> Field {
        let g = &self.grid;
        let m = g.points() as i64;
        let mut out = Field::zeros(g, self.num_components());
        for i in 0..g.len() {
            let mut idx = g.axis_indices(i);
            idx[axis] = (idx[axis] as i64 + shift).rem_euclid(m) as usize;
            let src = g.flat_index(idx);
            for (o, c) in out.comps.iter_mut().zip(&self.comps) {
                o[i] = c[src];
            }
        }
        out
    }

    /// Componentwise integral over the torus.
    pub fn integrate(&self) -> Vec<f64> {
        let cell = self.grid.volume() / self.len() as f64;
        self.comps.iter().map(|c| cell * c.iter().sum::<f64>()).collect()
    }

    /// `∫ f·g dx` with the dot product taken over components.
    pub fn inner_product(&self, other: &Field) -> f64 {
        let cell = self.grid.volume() / self.len() as f64;
        cell * self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            comps: self.comps.iter().map(|c| c.iter().map(|x| s * x).collect()).collect(),
        }
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + s * b)
    }

    fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.same_shape(other));
        Field {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Spectral interpolation onto another resolution of the same torus.
    pub fn resample(&self, target: &PeriodicGrid) -> Field {
        if *target == self.grid {
            return self.clone();
        }
        self.spectrum().resample(target).to_field()
    }
}

fn lattice_shift(grid: &PeriodicGrid, h: f64, axis: usize) -> Result<i64> {
    let spacing = grid.spacing(axis);
    let s = h / spacing;
    let r = s.round();
    if h == 0.0 || !h.is_finite() || (s - r).abs() > 1e-9 * r.abs().max(1.0) {
        return Err(Error::NonLatticeShift { h, spacing });
    }
    Ok(r as i64)
}
