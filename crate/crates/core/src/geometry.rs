//! Target manifolds embedded in ℝ^L.
//!
//! A target supplies the nearest-point map `π`, the projector family `P_p`
//! onto `T_{π(p)}N` and the derivatives `d^jP_p` that appear in every term of
//! the nonlinearity. For the round sphere the projector is the rational map
//!
//! ```text
//! P_p = I − p pᵀ / |p|²
//! ```
//!
//! and its jets are evaluated in closed form. Writing `P_p v = v − h(p)` with
//! `h(p) = p (p·v) c(p)`, `c(p) = 1/|p|²`, each derivative of `h` distributes
//! its directions over the three factors. The first two are affine in `p` and
//! absorb at most one direction each; the derivatives of `c` follow from
//! Faà di Bruno over partitions into blocks of size one or two, since `|p|²`
//! is quadratic.
//!
//! Coefficient convention: `(d^jP_p)^k_{l0, l1..lj} = ∂_{l1}..∂_{lj} (P_p)^k_{l0}`.
//! In [`TargetManifold::apply_jet`] the directions fill the derivative slots
//! `l1..lj` and `v` fills the projected slot `l0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest jet order exposed through the public API.
pub const MAX_JET_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    RoundSphere { ambient_dim: usize, radius: f64 },
    Flat { ambient_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetManifold {
    pub kind: TargetKind,
    /// Minimal admissible `|p|` for the sphere (δ₀ = r/2); unused for flat targets.
    pub injectivity_threshold: f64,
}

impl TargetManifold {
    pub fn round_sphere(ambient_dim: usize, radius: f64) -> Result<Self> {
        if ambient_dim < 2 {
            return Err(Error::Config(format!(
                "sphere needs ambient dimension >= 2, got {ambient_dim}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self {
            kind: TargetKind::RoundSphere { ambient_dim, radius },
            injectivity_threshold: 0.5 * radius,
        })
    }

    /// The unit sphere `S^{L-1} ⊂ ℝ^L`.
    pub fn unit_sphere(ambient_dim: usize) -> Self {
        Self::round_sphere(ambient_dim, 1.0).expect("unit sphere is valid for L >= 2")
    }

    pub fn flat(ambient_dim: usize) -> Self {
        Self { kind: TargetKind::Flat { ambient_dim }, injectivity_threshold: f64::INFINITY }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            TargetKind::RoundSphere { ambient_dim, .. } | TargetKind::Flat { ambient_dim } => {
                ambient_dim
            }
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, TargetKind::Flat { .. })
    }

    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            TargetKind::RoundSphere { radius, .. } => Some(radius),
            TargetKind::Flat { .. } => None,
        }
    }

    /// Largest distance from `N` at which the nearest-point projection stays well defined.
    pub fn tube_width(&self) -> Option<f64> {
        self.radius().map(|r| r - self.injectivity_threshold)
    }

    pub fn check_admissible(&self, p: &[f64]) -> Result<()> {
        debug_assert_eq!(p.len(), self.ambient_dim());
        if self.is_flat() {
            return Ok(());
        }
        let norm = norm(p);
        if norm >= self.injectivity_threshold {
            Ok(())
        } else {
            Err(Error::BelowInjectivityThreshold { norm, threshold: self.injectivity_threshold })
        }
    }

    /// Euclidean distance from `p` to `N`.
    pub fn distance(&self, p: &[f64]) -> f64 {
        match self.kind {
            TargetKind::RoundSphere { radius, .. } => (norm(p) - radius).abs(),
            TargetKind::Flat { .. } => 0.0,
        }
    }

    pub fn nearest_point(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; p.len()];
        self.nearest_point_into(p, &mut out)?;
        Ok(out)
    }

    pub fn nearest_point_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_admissible(p)?;
        match self.kind {
            TargetKind::RoundSphere { radius, .. } => {
                let scale = radius / norm(p);
                out.iter_mut().zip(p).for_each(|(o, &x)| *o = scale * x);
            }
            TargetKind::Flat { .. } => out.copy_from_slice(p),
        }
        Ok(())
    }

    /// `P_p v` written into `out`.
    pub fn project_into(&self, p: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_admissible(p)?;
        match self.kind {
            TargetKind::RoundSphere { .. } => {
                let c = dot(p, v) / dot(p, p);
                for ((o, &vi), &pi) in out.iter_mut().zip(v).zip(p) {
                    *o = vi - c * pi;
                }
            }
            TargetKind::Flat { .. } => out.copy_from_slice(v),
        }
        Ok(())
    }

    /// `(I − P_p) v` written into `out`.
    pub fn normal_part_into(&self, p: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        self.project_into(p, v, out)?;
        out.iter_mut().zip(v).for_each(|(o, &vi)| *o = vi - *o);
        Ok(())
    }

    /// The projector as a dense row-major `L × L` matrix.
    pub fn projector(&self, p: &[f64]) -> Result<LinearMap> {
        self.projector_derivative(p, &[])
    }

    /// `d^jP_p(w_1, …, w_j, ·)` as a dense row-major `L × L` matrix, `j = directions.len()`.
    pub fn projector_derivative(&self, p: &[f64], directions: &[&[f64]]) -> Result<LinearMap> {
        if directions.len() > MAX_JET_ORDER {
            return Err(Error::UnsupportedOrder(directions.len()));
        }
        let l = self.ambient_dim();
        let mut entries = vec![0.0; l * l];
        let mut e = vec![0.0; l];
        let mut col = vec![0.0; l];
        for c in 0..l {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            self.apply_jet(p, directions, &e, &mut col)?;
            for r in 0..l {
                entries[r * l + c] = col[r];
            }
        }
        Ok(LinearMap { dim: l, entries })
    }

    /// Full coefficient tensor of `d^{order}P_p`.
    pub fn jet(&self, p: &[f64], order: usize) -> Result<ProjectorJet> {
        if order > MAX_JET_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        self.check_admissible(p)?;
        let l = self.ambient_dim();
        let basis: Vec<Vec<f64>> = (0..l)
            .map(|i| {
                let mut e = vec![0.0; l];
                e[i] = 1.0;
                e
            })
            .collect();
        let slots = order + 1;
        let count = l.pow(slots as u32);
        let mut value = vec![0.0; l * count];
        let mut out = vec![0.0; l];
        let mut idx = vec![0usize; slots];
        for flat in 0..count {
            let mut rem = flat;
            for s in (0..slots).rev() {
                idx[s] = rem % l;
                rem /= l;
            }
            let dirs: Vec<&[f64]> = idx[1..].iter().map(|&i| basis[i].as_slice()).collect();
            self.apply_jet(p, &dirs, &basis[idx[0]], &mut out)?;
            for k in 0..l {
                value[k * count + flat] = out[k];
            }
        }
        Ok(ProjectorJet { order, base_point: p.to_vec(), dim: l, value })
    }

    /// `d^jP_p(w_1, …, w_j) v` written into `out`, with `j = directions.len() ≤ 3`.
    pub fn apply_jet(
        &self,
        p: &[f64],
        directions: &[&[f64]],
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        if directions.len() > MAX_JET_ORDER {
            return Err(Error::UnsupportedOrder(directions.len()));
        }
        self.apply_jet_unbounded(p, directions, v, out)
    }

    /// Same as [`apply_jet`](Self::apply_jet) without the order cap; the
    /// expansion checks differentiate third-order jets once more.
    pub(crate) fn apply_jet_unbounded(
        &self,
        p: &[f64],
        directions: &[&[f64]],
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_admissible(p)?;
        if directions.is_empty() {
            return self.project_into(p, v, out);
        }
        if self.is_flat() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        sphere_jet(p, directions, v, out);
        Ok(())
    }
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl LinearMap {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim + c]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.at(r, c) * v[c]).sum())
            .collect()
    }

    pub fn compose(&self, other: &LinearMap) -> LinearMap {
        let n = self.dim;
        let mut entries = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                entries[r * n + c] = (0..n).map(|k| self.at(r, k) * other.at(k, c)).sum();
            }
        }
        LinearMap { dim: n, entries }
    }

    pub fn max_abs_diff(&self, other: &LinearMap) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Coefficients `(d^jP_p)^k_{l0..lj}` stored as `value[k * L^{j+1} + (l0 … lj)]`,
/// with the slot tuple in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorJet {
    pub order: usize,
    pub base_point: Vec<f64>,
    pub dim: usize,
    pub value: Vec<f64>,
}

impl ProjectorJet {
    pub fn coefficient(&self, k: usize, slots: &[usize]) -> f64 {
        debug_assert_eq!(slots.len(), self.order + 1);
        let flat = slots.iter().fold(0, |acc, &s| acc * self.dim + s);
        self.value[k * self.dim.pow(self.order as u32 + 1) + flat]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// Jets of `p ↦ I − p pᵀ/|p|²` for j ≥ 1; only the `h` part contributes.
fn sphere_jet(p: &[f64], dirs: &[&[f64]], v: &[f64], out: &mut [f64]) {
    let j = dirs.len();
    debug_assert!(j <= 8);
    let s = dot(p, p);
    let pv = dot(p, v);
    let mut q = [0.0; 8];
    let mut wv = [0.0; 8];
    let mut g = [[0.0; 8]; 8];
    for a in 0..j {
        q[a] = dot(p, dirs[a]);
        wv[a] = dot(dirs[a], v);
        for b in a..j {
            g[a][b] = dot(dirs[a], dirs[b]);
            g[b][a] = g[a][b];
        }
    }
    let full = (1usize << j) - 1;
    let ctx = InverseNormJet { s, q: &q, g: &g };

    out.iter_mut().for_each(|o| *o = 0.0);
    // factor p absorbs direction a (or none), factor p·v absorbs direction b (or none)
    for a in std::iter::once(None).chain((0..j).map(Some)) {
        for b in std::iter::once(None).chain((0..j).map(Some)) {
            if a.is_some() && a == b {
                continue;
            }
            let mut rest = full;
            if let Some(a) = a {
                rest &= !(1 << a);
            }
            if let Some(b) = b {
                rest &= !(1 << b);
            }
            let scalar = b.map_or(pv, |b| wv[b]) * ctx.eval(rest);
            if scalar == 0.0 {
                continue;
            }
            let vec = a.map_or(p, |a| dirs[a]);
            for (o, &x) in out.iter_mut().zip(vec) {
                *o -= scalar * x;
            }
        }
    }
}

struct InverseNormJet<'a> {
    s: f64,
    q: &'a [f64; 8],
    g: &'a [[f64; 8]; 8],
}

impl InverseNormJet<'_> {
    /// Derivative of `1/|p|²` along the directions in `mask`.
    fn eval(&self, mask: usize) -> f64 {
        self.partitions(mask, 0, 1.0)
    }

    fn partitions(&self, mask: usize, blocks: u32, prod: f64) -> f64 {
        if mask == 0 {
            // b-th derivative of 1/s is (−1)^b b! s^{−b−1}
            let mut f = 1.0 / self.s;
            for b in 1..=blocks {
                f *= -(b as f64) / self.s;
            }
            return f * prod;
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut total = self.partitions(rest, blocks + 1, prod * 2.0 * self.q[i]);
        let mut pairs = rest;
        while pairs != 0 {
            let k = pairs.trailing_zeros() as usize;
            pairs &= !(1 << k);
            total += self.partitions(rest & !(1 << k), blocks + 1, prod * 2.0 * self.g[i][k]);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere() -> TargetManifold {
        TargetManifold::unit_sphere(3)
    }

    #[test]
    fn nearest_point_examples() {
        let t = sphere();
        assert_eq!(t.nearest_point(&[2.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let q = t.nearest_point(&[0.6, 0.8, 0.0]).unwrap();
        assert!((q[0] - 0.6).abs() < 1e-15 && (q[1] - 0.8).abs() < 1e-15 && q[2] == 0.0);
        assert!(matches!(
            t.nearest_point(&[0.1, 0.0, 0.0]),
            Err(Error::BelowInjectivityThreshold { .. })
        ));
    }

    #[test]
    fn flat_nearest_point_is_identity() {
        let t = TargetManifold::flat(2);
        assert_eq!(t.nearest_point(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn projector_examples() {
        let t = sphere();
        let p = t.projector(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.apply(&[0.0, 1.0, 0.0]), vec![0.0, 1.0, 0.0]);
        assert_eq!(p.apply(&[1.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        let p = t.projector(&[0.0, 2.0, 0.0]).unwrap();
        assert_eq!(p.apply(&[1.0, 1.0, 0.0]), vec![1.0, 0.0, 0.0]);
        assert!(t.projector(&[0.0, 0.3, 0.0]).is_err());
    }

    #[test]
    fn first_jet_examples() {
        let t = sphere();
        let d = t.projector_derivative(&[1.0, 0.0, 0.0], &[&[0.0, 1.0, 0.0]]).unwrap();
        let r = d.apply(&[0.0, 1.0, 0.0]);
        assert!((r[0] + 1.0).abs() < 1e-15 && r[1].abs() < 1e-15 && r[2].abs() < 1e-15);
        let d = t.projector_derivative(&[1.0, 0.0, 0.0], &[&[1.0, 0.0, 0.0]]).unwrap();
        assert!(d.apply(&[0.0, 1.0, 0.0]).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn flat_jets_vanish() {
        let t = TargetManifold::flat(3);
        let d = t.projector_derivative(&[5.0, -1.0, 2.0], &[&[0.3, 0.1, 0.0]]).unwrap();
        assert!(d.entries.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unsupported_order_is_rejected() {
        let t = sphere();
        let w = [0.0, 1.0, 0.0];
        let dirs: Vec<&[f64]> = vec![&w; 4];
        assert!(matches!(
            t.projector_derivative(&[1.0, 0.0, 0.0], &dirs),
            Err(Error::UnsupportedOrder(4))
        ));
    }

    #[test]
    fn order_zero_jet_matches_rank_one_formula() {
        let t = sphere();
        let p = [0.3, -1.1, 0.4];
        let jet = t.jet(&p, 0).unwrap();
        let s = dot(&p, &p);
        for k in 0..3 {
            for l in 0..3 {
                let expected = if k == l { 1.0 } else { 0.0 } - p[k] * p[l] / s;
                assert!((jet.coefficient(k, &[l]) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tangent_pair_identity_on_unit_sphere() {
        // dP_p(w) v = −(w·v) p for p on the sphere and w, v tangent
        let t = sphere();
        let p = [0.0, 0.6, 0.8];
        let w = [1.0, 0.4, -0.3];
        let v = [-0.5, 0.8, -0.6];
        let mut out = [0.0; 3];
        t.apply_jet(&p, &[&w], &v, &mut out).unwrap();
        let wv = dot(&w, &v);
        for i in 0..3 {
            assert!((out[i] + wv * p[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn second_jet_is_symmetric_in_directions() {
        let t = sphere();
        let p = [0.9, 0.2, -0.3];
        let (w1, w2, v) = ([0.1, 0.7, 0.2], [-0.4, 0.3, 0.9], [0.5, -0.2, 0.1]);
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        t.apply_jet(&p, &[&w1, &w2], &v, &mut a).unwrap();
        t.apply_jet(&p, &[&w2, &w1], &v, &mut b).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-15);
        }
    }
}
