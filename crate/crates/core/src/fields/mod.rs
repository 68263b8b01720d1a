//! Periodic grid fields, density paths, measures and the macroscopic solvers.

mod solvers;

pub use solvers::*;

use crate::error::{KmpError, Result};
use crate::moments;
use crate::quad::{cubic_stencil, periodic_cubic_weights};
use crate::spectral::Spectral;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// What a grid field represents; stored in the binary container.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Density,
    Potential,
    Velocity,
    Other,
}

impl FieldKind {
    pub fn tag(self) -> u8 {
        match self {
            FieldKind::Density => 1,
            FieldKind::Potential => 2,
            FieldKind::Velocity => 3,
            FieldKind::Other => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(FieldKind::Density),
            2 => Some(FieldKind::Potential),
            3 => Some(FieldKind::Velocity),
            4 => Some(FieldKind::Other),
            _ => None,
        }
    }
}

/// Values on the periodic grid `{0, 1/n, ..., 1-1/n}^d`, one or more
/// components per node, stored component-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub dim: usize,
    pub n: usize,
    pub comps: usize,
    pub kind: FieldKind,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(dim: usize, n: usize, comps: usize, kind: FieldKind) -> Self {
        GridField {
            dim,
            n,
            comps,
            kind,
            data: vec![0.0; comps * n.pow(dim as u32)],
        }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(dim: usize, n: usize, kind: FieldKind, f: F) -> Self {
        let len = n.pow(dim as u32);
        let data = (0..len)
            .map(|i| f(&node_position(dim, n, i)[..dim]))
            .collect();
        GridField {
            dim,
            n,
            comps: 1,
            kind,
            data,
        }
    }

    pub fn from_components(dim: usize, n: usize, kind: FieldKind, comps: Vec<Vec<f64>>) -> Self {
        let c = comps.len();
        let data = comps.into_iter().flatten().collect();
        GridField {
            dim,
            n,
            comps: c,
            kind,
            data,
        }
    }

    /// Number of grid nodes.
    pub fn nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        node_position(self.dim, self.n, idx)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let m = self.nodes();
        &self.data[c * m..(c + 1) * m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.nodes();
        &mut self.data[c * m..(c + 1) * m]
    }

    pub fn components(&self) -> Vec<Vec<f64>> {
        (0..self.comps)
            .map(|c| self.component(c).to_vec())
            .collect()
    }

    /// Grid mean of component 0, i.e. the integral over the torus.
    pub fn mean(&self) -> f64 {
        let v = self.component(0);
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest Euclidean norm over nodes of a vector field.
    pub fn max_norm(&self) -> f64 {
        let m = self.nodes();
        (0..m)
            .map(|i| {
                (0..self.comps)
                    .map(|c| self.data[c * m + i].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `int |f|^2 dx` summed over components.
    pub fn l2_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.nodes() as f64
    }

    /// Periodic cubic interpolation of component `c` at `x`.
    pub fn sample_component(&self, c: usize, x: &[f64]) -> f64 {
        let vals = self.component(c);
        let n = self.n as i64;
        let mut starts = [0i64; 3];
        let mut ws = [[1.0, 0.0, 0.0, 0.0]; 3];
        for a in 0..self.dim {
            let (s, w) = periodic_cubic_weights(x[a] * self.n as f64);
            starts[a] = s;
            ws[a] = w;
        }
        let r = |a: usize| if a < self.dim { 4 } else { 1 };
        let mut acc = 0.0;
        for k in 0..r(2) {
            for j in 0..r(1) {
                for i in 0..r(0) {
                    let idx0 = (starts[0] + i as i64).rem_euclid(n) as usize;
                    let idx1 = (starts[1] + j as i64).rem_euclid(n) as usize;
                    let idx2 = (starts[2] + k as i64).rem_euclid(n) as usize;
                    let flat = idx0 + self.n * (idx1 + self.n * idx2);
                    acc += ws[0][i] * ws[1][j] * ws[2][k] * vals[flat];
                }
            }
        }
        acc
    }

    pub fn sample(&self, x: &[f64]) -> f64 {
        self.sample_component(0, x)
    }

    /// Spectral resampling onto a grid of side `m` (zero padding or
    /// truncation of Fourier modes).
    pub fn resample(&self, m: usize) -> GridField {
        if m == self.n {
            return self.clone();
        }
        let src = Spectral::new(self.dim, self.n);
        let dst = Spectral::new(self.dim, m);
        let scale = dst.len() as f64 / src.len() as f64;
        let mut out = GridField::zeros(self.dim, m, self.comps, self.kind);
        for c in 0..self.comps {
            let hat = src.forward(self.component(c));
            let mut buf = vec![Complex64::new(0.0, 0.0); dst.len()];
            let limit = (self.n.min(m) as i64 - 1) / 2;
            for (i, v) in hat.iter().enumerate() {
                let k = src.mode(i);
                if (0..self.dim).any(|a| k[a].abs() > limit) {
                    continue;
                }
                let mut idx = 0usize;
                let mut stride = 1usize;
                for kk in k.iter().take(self.dim) {
                    idx += (kk.rem_euclid(m as i64) as usize) * stride;
                    stride *= m;
                }
                buf[idx] = *v * scale;
            }
            out.component_mut(c).copy_from_slice(&dst.inverse_real(buf));
        }
        out
    }

    pub fn check_same_grid(&self, other: &GridField) -> Result<()> {
        if self.dim != other.dim || self.n != other.n {
            return Err(KmpError::DimensionMismatch {
                expected: self.nodes(),
                got: other.nodes(),
            });
        }
        Ok(())
    }
}

pub fn node_position(dim: usize, n: usize, idx: usize) -> [f64; 3] {
    let mut p = [0.0; 3];
    let mut r = idx;
    for a in p.iter_mut().take(dim) {
        *a = (r % n) as f64 / n as f64;
        r /= n;
    }
    p
}

/// Shortest periodic displacement `x - y` on the unit torus.
pub fn torus_delta(x: f64, y: f64) -> f64 {
    let d = x - y;
    d - d.round()
}

/// A point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub pos: [f64; 3],
    pub weight: f64,
}

/// Density part on a grid plus an atomic part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureState {
    pub dim: usize,
    pub density: Option<GridField>,
    pub atoms: Vec<Atom>,
}

impl MeasureState {
    pub fn zero(dim: usize) -> Self {
        MeasureState {
            dim,
            density: None,
            atoms: Vec::new(),
        }
    }

    pub fn from_density(density: GridField) -> Self {
        MeasureState {
            dim: density.dim,
            density: Some(density),
            atoms: Vec::new(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d.mean())
            + self.atoms.iter().map(|a| a.weight).sum::<f64>()
    }

    /// `<f, mu>`.
    pub fn pair<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        let dens = self.density.as_ref().map_or(0.0, |d| {
            (0..d.nodes())
                .map(|i| f(&d.position(i)[..self.dim]) * d.data[i])
                .sum::<f64>()
                / d.nodes() as f64
        });
        dens + self
            .atoms
            .iter()
            .map(|a| a.weight * f(&a.pos[..self.dim]))
            .sum::<f64>()
    }

    pub fn is_valid(&self) -> bool {
        self.density
            .as_ref()
            .map_or(true, |d| d.data.iter().all(|&v| v >= 0.0 && v.is_finite()))
            && self
                .atoms
                .iter()
                .all(|a| a.weight >= 0.0 && a.weight.is_finite())
    }
}

/// Total variation distance `|mu - nu|(T^d)`. Densities must share a grid;
/// atoms are matched by position.
pub fn tv_distance(mu: &MeasureState, nu: &MeasureState) -> Result<f64> {
    let dens = match (&mu.density, &nu.density) {
        (Some(a), Some(b)) => {
            a.check_same_grid(b)?;
            a.data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / a.nodes() as f64
        }
        (Some(a), None) | (None, Some(a)) => {
            a.data.iter().map(|x| x.abs()).sum::<f64>() / a.nodes() as f64
        }
        (None, None) => 0.0,
    };
    let mut merged: Vec<(Atom, f64)> = Vec::new();
    for (atoms, sign) in [(&mu.atoms, 1.0), (&nu.atoms, -1.0)] {
        for a in atoms.iter() {
            if let Some(slot) = merged
                .iter_mut()
                .find(|(b, _)| same_point(&a.pos, &b.pos, mu.dim))
            {
                slot.1 += sign * a.weight;
            } else {
                merged.push((*a, sign * a.weight));
            }
        }
    }
    Ok(dens + merged.iter().map(|(_, w)| w.abs()).sum::<f64>())
}

pub(crate) fn same_point(a: &[f64; 3], b: &[f64; 3], dim: usize) -> bool {
    (0..dim).all(|i| torus_delta(a[i], b[i]).abs() < 1e-12)
}

/// `Theta_K` applied to a measure: densities pointwise, atoms scaled by `K/3`.
pub fn theta_on_measure(mu: &MeasureState, k: f64) -> MeasureState {
    let density = mu.density.as_ref().map(|d| {
        let mut out = d.clone();
        for v in out.data.iter_mut() {
            *v = moments::theta(*v, k);
        }
        out
    });
    let atoms = mu
        .atoms
        .iter()
        .map(|a| Atom {
            pos: a.pos,
            weight: a.weight * moments::theta_infinity(k),
        })
        .collect();
    MeasureState {
        dim: mu.dim,
        density,
        atoms,
    }
}

/// `sup_rho |Theta_K'(rho)|` estimated on a dense grid of `[0, rho_max]`,
/// together with the slope at infinity `K/3`.
pub fn theta_lipschitz(k: f64, rho_max: f64) -> f64 {
    let pts = 4096;
    (0..=pts)
        .map(|i| moments::theta_derivative(rho_max * i as f64 / pts as f64, k).abs())
        .fold(moments::theta_infinity(k), f64::max)
}

/// A strictly positive density path `t -> u(t, .)` on the torus.
pub trait DensityPath: Send + Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn value(&self, t: f64, x: &[f64]) -> f64;

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        let h = 1e-3 * self.horizon().max(1e-6);
        (-self.value(t + 2.0 * h, x) + 8.0 * self.value(t + h, x) - 8.0 * self.value(t - h, x)
            + self.value(t - 2.0 * h, x))
            / (12.0 * h)
    }

    fn gradient(&self, t: f64, x: &[f64]) -> [f64; 3] {
        let h = 1e-5;
        let mut g = [0.0; 3];
        let mut y = [x[0], *x.get(1).unwrap_or(&0.0), *x.get(2).unwrap_or(&0.0)];
        for a in 0..self.dim() {
            let x0 = y[a];
            y[a] = x0 + h;
            let p = self.value(t, &y[..self.dim()]);
            y[a] = x0 - h;
            let m = self.value(t, &y[..self.dim()]);
            y[a] = x0;
            g[a] = (p - m) / (2.0 * h);
        }
        g
    }

    /// `(inf u, sup u)` over `[0, T] x T^d`.
    fn bounds(&self) -> (f64, f64);

    /// Times near which the integrands of the cost functionals behave like
    /// `|t - t0|^{-1/2}`.
    fn singular_times(&self) -> Vec<f64> {
        Vec::new()
    }

    fn grid(&self, t: f64, n: usize) -> GridField {
        let d = self.dim();
        GridField::from_fn(d, n, FieldKind::Density, |x| self.value(t, x))
    }

    fn dt_grid(&self, t: f64, n: usize) -> GridField {
        let d = self.dim();
        GridField::from_fn(d, n, FieldKind::Density, |x| self.time_derivative(t, x))
    }
}

pub type SmoothPath = Arc<dyn DensityPath>;

type PathFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Density path given by closed-form closures.
#[derive(Clone)]
pub struct AnalyticPath {
    pub dim: usize,
    pub horizon: f64,
    pub bounds: (f64, f64),
    pub singular: Vec<f64>,
    u: PathFn,
    dt: Option<PathFn>,
}

impl AnalyticPath {
    pub fn new<F>(dim: usize, horizon: f64, bounds: (f64, f64), u: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        AnalyticPath {
            dim,
            horizon,
            bounds,
            singular: Vec::new(),
            u: Arc::new(u),
            dt: None,
        }
    }

    pub fn with_time_derivative<F>(mut self, dt: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.dt = Some(Arc::new(dt));
        self
    }

    pub fn with_singular_times(mut self, times: Vec<f64>) -> Self {
        self.singular = times;
        self
    }

    /// Frozen profile `u(t, x) = u0(x)`.
    pub fn stationary<F>(dim: usize, horizon: f64, bounds: (f64, f64), u0: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        AnalyticPath::new(dim, horizon, bounds, move |_, x| u0(x)).with_time_derivative(|_, _| 0.0)
    }
}

impl DensityPath for AnalyticPath {
    fn dim(&self) -> usize {
        self.dim
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.u)(t, x)
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        match &self.dt {
            Some(f) => f(t, x),
            None => {
                let h = 1e-3 * self.horizon.max(1e-6);
                (-(self.u)(t + 2.0 * h, x) + 8.0 * (self.u)(t + h, x) - 8.0 * (self.u)(t - h, x)
                    + (self.u)(t - 2.0 * h, x))
                    / (12.0 * h)
            }
        }
    }
    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
    fn singular_times(&self) -> Vec<f64> {
        self.singular.clone()
    }
}

/// Density path stored as grid snapshots at uniformly spaced times,
/// interpolated by cubics in time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridPath {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridField>,
}

impl GridPath {
    pub fn new(times: Vec<f64>, snapshots: Vec<GridField>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(KmpError::InvalidParameter(
                "grid path needs matching nonempty times and snapshots".into(),
            ));
        }
        Ok(GridPath { times, snapshots })
    }

    pub fn last(&self) -> &GridField {
        self.snapshots.last().expect("nonempty")
    }

    fn step(&self) -> f64 {
        if self.times.len() < 2 {
            1.0
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    fn combine(&self, t: f64, derivative: bool) -> GridField {
        let (b, w, dw) = cubic_stencil(self.times[0], self.step(), self.times.len(), t);
        let ws = if derivative { dw } else { w };
        let mut out = self.snapshots[0].clone();
        for v in out.data.iter_mut() {
            *v = 0.0;
        }
        for (j, wj) in ws.iter().enumerate() {
            if *wj == 0.0 || b + j >= self.snapshots.len() {
                continue;
            }
            for (o, s) in out.data.iter_mut().zip(&self.snapshots[b + j].data) {
                *o += wj * s;
            }
        }
        out
    }
}

impl DensityPath for GridPath {
    fn dim(&self) -> usize {
        self.snapshots[0].dim
    }
    fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.combine(t, false).sample(x)
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.combine(t, true).sample(x)
    }
    fn bounds(&self) -> (f64, f64) {
        let lo = self
            .snapshots
            .iter()
            .map(|s| s.min())
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .snapshots
            .iter()
            .map(|s| s.max())
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
    fn grid(&self, t: f64, n: usize) -> GridField {
        self.combine(t, false).resample(n)
    }
    fn dt_grid(&self, t: f64, n: usize) -> GridField {
        self.combine(t, true).resample(n)
    }
}

/// A time-dependent scalar field such as the control potential `H`.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn grid(&self, t: f64, n: usize) -> GridField {
        GridField::from_fn(self.dim(), n, FieldKind::Other, |x| self.value(t, x))
    }
}

/// A time-dependent vector field such as a control `g`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> [f64; 3];
    fn grid(&self, t: f64, n: usize) -> GridField {
        let d = self.dim();
        let len = n.pow(d as u32);
        let mut comps = vec![vec![0.0; len]; d];
        for i in 0..len {
            let x = node_position(d, n, i);
            let v = self.value(t, &x[..d]);
            for a in 0..d {
                comps[a][i] = v[a];
            }
        }
        GridField::from_components(d, n, FieldKind::Velocity, comps)
    }
}

pub struct FnScalarField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64]) -> f64 + Send + Sync> ScalarField for FnScalarField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }
}

pub struct FnVectorField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64]) -> [f64; 3] + Send + Sync> VectorField for FnVectorField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> [f64; 3] {
        (self.f)(t, x)
    }
}

/// `chi_K(t, x) = A_K(u(t, x))`.
pub struct ChiField {
    pub path: SmoothPath,
    pub cutoff: f64,
}

impl ScalarField for ChiField {
    fn dim(&self) -> usize {
        self.path.dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        moments::a_k(self.path.value(t, x), self.cutoff)
    }
    fn grid(&self, t: f64, n: usize) -> GridField {
        let mut u = self.path.grid(t, n);
        for v in u.data.iter_mut() {
            *v = moments::a_k(*v, self.cutoff);
        }
        u.kind = FieldKind::Other;
        u
    }
}

/// Scalar field stored as grid slices at uniform times, cubic in time and
/// periodic cubic in space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSeries {
    pub times: Vec<f64>,
    pub slices: Vec<GridField>,
}

impl FieldSeries {
    fn step(&self) -> f64 {
        if self.times.len() < 2 {
            1.0
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    pub fn at(&self, t: f64) -> GridField {
        let (b, w, _) = cubic_stencil(self.times[0], self.step(), self.times.len(), t);
        let mut out = self.slices[0].clone();
        for v in out.data.iter_mut() {
            *v = 0.0;
        }
        for (j, wj) in w.iter().enumerate() {
            if *wj == 0.0 || b + j >= self.slices.len() {
                continue;
            }
            for (o, s) in out.data.iter_mut().zip(&self.slices[b + j].data) {
                *o += wj * s;
            }
        }
        out
    }
}

impl ScalarField for FieldSeries {
    fn dim(&self) -> usize {
        self.slices[0].dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let (b, w, _) = cubic_stencil(self.times[0], self.step(), self.times.len(), t);
        w.iter()
            .enumerate()
            .filter(|(j, wj)| **wj != 0.0 && b + j < self.slices.len())
            .map(|(j, wj)| wj * self.slices[b + j].sample(x))
            .sum()
    }
    fn grid(&self, t: f64, n: usize) -> GridField {
        self.at(t).resample(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn resample_preserves_band_limited_fields() {
        let f = GridField::from_fn(2, 16, FieldKind::Density, |x| {
            1.0 + (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).sin()
        });
        let g = f.resample(32).resample(16);
        for (a, b) in f.data.iter().zip(&g.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let x = [0.123, 0.456];
        let exact = 1.0 + (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).sin();
        assert!((f.resample(64).sample(&x) - exact).abs() < 1e-4);
    }

    #[test]
    fn theta_on_atoms_and_zero() {
        let zero = MeasureState::zero(1);
        assert_eq!(theta_on_measure(&zero, 2.0).total_mass(), 0.0);
        let mu = MeasureState {
            dim: 1,
            density: None,
            atoms: vec![Atom {
                pos: [0.3, 0.0, 0.0],
                weight: 2.0,
            }],
        };
        let th = theta_on_measure(&mu, 6.0);
        assert!((th.atoms[0].weight - 4.0).abs() < 1e-15);
    }

    #[test]
    fn tv_matches_atoms() {
        let a = MeasureState {
            dim: 1,
            density: None,
            atoms: vec![Atom {
                pos: [0.25, 0.0, 0.0],
                weight: 0.5,
            }],
        };
        let b = MeasureState {
            dim: 1,
            density: None,
            atoms: vec![Atom {
                pos: [0.75, 0.0, 0.0],
                weight: 0.5,
            }],
        };
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
    }
}
