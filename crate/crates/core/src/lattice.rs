//! Discrete torus, nearest-neighbour edges, discrete Laplacian and the
//! massive Green kernel.

use crate::error::{invalid, KmpError, Result};
use crate::spectral::Spectral;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The torus `{0, 1/N, ..., 1-1/N}^d`.
///
/// Sites are indexed lexicographically with axis 0 fastest. Edge `e` joins
/// site `e / d` to its neighbour in direction `e % d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    side: usize,
    #[serde(default)]
    reversed: bool,
}

impl Lattice {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        if side == 0 || side == 2 {
            return invalid(format!("side must be 1 or at least 3, got {side}"));
        }
        Ok(Lattice {
            dim,
            side,
            reversed: false,
        })
    }

    /// Same lattice with every edge oriented in the negative direction.
    pub fn reversed(mut self) -> Self {
        self.reversed = !self.reversed;
        self
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn num_edges(&self) -> usize {
        if self.side == 1 {
            0
        } else {
            self.dim * self.num_sites()
        }
    }

    /// `N^{-d}`, the mass carried by one site.
    pub fn site_weight(&self) -> f64 {
        1.0 / self.num_sites() as f64
    }

    pub fn coords(&self, site: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut r = site;
        for a in 0..self.dim {
            c[a] = r % self.side;
            r /= self.side;
        }
        c
    }

    pub fn site_index(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim {
            idx += (c[a] % self.side) * stride;
            stride *= self.side;
        }
        idx
    }

    /// Macroscopic position `x/N` of a site.
    pub fn position(&self, site: usize) -> [f64; 3] {
        let c = self.coords(site);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = c[a] as f64 / self.side as f64;
        }
        p
    }

    pub fn shift(&self, site: usize, axis: usize, steps: i64) -> usize {
        let mut c = self.coords(site);
        let n = self.side as i64;
        c[axis] = (c[axis] as i64 + steps).rem_euclid(n) as usize;
        self.site_index(&c)
    }

    /// Translate a site by an integer vector.
    pub fn translate(&self, site: usize, offset: &[i64]) -> usize {
        let mut c = self.coords(site);
        let n = self.side as i64;
        for a in 0..self.dim {
            c[a] = (c[a] as i64 + offset[a]).rem_euclid(n) as usize;
        }
        self.site_index(&c)
    }

    /// Endpoints `(x, y)` of an oriented edge.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        let site = e / self.dim;
        let axis = e % self.dim;
        let other = self.shift(site, axis, 1);
        if self.reversed {
            (other, site)
        } else {
            (site, other)
        }
    }

    pub fn edge_axis(&self, e: usize) -> usize {
        e % self.dim
    }

    /// Midpoint of an edge in macroscopic coordinates.
    pub fn edge_midpoint(&self, e: usize) -> [f64; 3] {
        let site = e / self.dim;
        let axis = e % self.dim;
        let mut p = self.position(site);
        p[axis] += 0.5 / self.side as f64;
        p
    }

    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        if self.side == 1 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(2 * self.dim);
        for a in 0..self.dim {
            out.push(self.shift(site, a, 1));
            out.push(self.shift(site, a, -1));
        }
        out
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.num_sites() {
            return Err(KmpError::DimensionMismatch {
                expected: self.num_sites(),
                got: len,
            });
        }
        Ok(())
    }

    /// `<f, g>_N = N^{-d} sum f g`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.site_weight()
    }

    /// `(Delta_N f)(x) = N^2 sum_{y~x} (f(y) - f(x))`.
    pub fn laplacian(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f.len())?;
        let n2 = (self.side * self.side) as f64;
        let mut out = vec![0.0; f.len()];
        for e in 0..self.num_edges() {
            let (x, y) = self.edge(e);
            let diff = f[y] - f[x];
            out[x] += n2 * diff;
            out[y] -= n2 * diff;
        }
        Ok(out)
    }

    fn half_width(&self, eps: f64) -> Result<usize> {
        if !(eps > 0.0) {
            return invalid(format!("averaging radius must be positive, got {eps}"));
        }
        let w = (self.side as f64 * eps * (1.0 + 1e-12)).floor() as usize;
        if 2 * w + 1 > self.side {
            return invalid(format!(
                "averaging box of side {} exceeds torus side {}",
                2 * w + 1,
                self.side
            ));
        }
        Ok(w)
    }

    /// Mean of `xi` over the periodic box of side `2 floor(N eps) + 1`
    /// centred at `site`.
    pub fn local_average(&self, xi: &[f64], eps: f64, site: usize) -> Result<f64> {
        self.check_len(xi.len())?;
        let w = self.half_width(eps)? as i64;
        let mut sum = 0.0;
        let mut count = 0usize;
        let range: Vec<i64> = (-w..=w).collect();
        let zeros = [0i64];
        let r1: &[i64] = if self.dim > 1 { &range } else { &zeros };
        let r2: &[i64] = if self.dim > 2 { &range } else { &zeros };
        for &c in r2 {
            for &b in r1 {
                for &a in &range {
                    sum += xi[self.translate(site, &[a, b, c])];
                    count += 1;
                }
            }
        }
        Ok(sum / count as f64)
    }

    /// Local averages at every site, computed separably.
    pub fn local_averages(&self, xi: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.check_len(xi.len())?;
        let w = self.half_width(eps)? as i64;
        let width = (2 * w + 1) as f64;
        let mut cur = xi.to_vec();
        for axis in 0..self.dim {
            let mut next = vec![0.0; cur.len()];
            for (site, out) in next.iter_mut().enumerate() {
                let mut s = 0.0;
                for o in -w..=w {
                    s += cur[self.shift(site, axis, o)];
                }
                *out = s / width;
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Eigenvalue of `-Delta_N` for the Fourier mode with flat index `idx`.
    pub fn laplacian_eigenvalue(&self, spectral: &Spectral, idx: usize) -> f64 {
        let m = spectral.multi_index(idx);
        let n = self.side as f64;
        (0..self.dim)
            .map(|a| n * n * (2.0 - 2.0 * (2.0 * PI * m[a] as f64 / n).cos()))
            .sum()
    }
}

/// Solution of `(-Delta_N + 1) G = N^d 1_{x=0}`.
#[derive(Clone, Debug)]
pub struct GreenKernel {
    lattice: Lattice,
    values: Vec<f64>,
    resolvent: Vec<f64>,
    spectral: Spectral,
}

impl GreenKernel {
    pub fn new(lattice: Lattice) -> Self {
        let spectral = Spectral::new(lattice.dim(), lattice.side());
        let resolvent: Vec<f64> = (0..lattice.num_sites())
            .map(|i| 1.0 / (lattice.laplacian_eigenvalue(&spectral, i) + 1.0))
            .collect();
        let nd = lattice.num_sites() as f64;
        let hat: Vec<num_complex::Complex64> = resolvent
            .iter()
            .map(|&r| num_complex::Complex64::new(nd * r, 0.0))
            .collect();
        let values = spectral.inverse_real(hat);
        GreenKernel {
            lattice,
            values,
            resolvent,
            spectral,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// `G_N(x)` for the site `x` (as an offset from the origin).
    pub fn value(&self, site: usize) -> f64 {
        self.values[site]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `N^{-d} sum_x G_N(x)`, equal to one.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.site_weight()
    }

    /// `Gamma_N = G_N(0) - G_N(e_1/N)`.
    pub fn gamma(&self) -> f64 {
        if self.lattice.side() == 1 {
            return 0.0;
        }
        self.values[0] - self.values[self.lattice.shift(0, 0, 1)]
    }

    /// `(G f)(x) = N^{-d} sum_y G_N(x-y) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut hat = self.spectral.forward(f);
        for (v, r) in hat.iter_mut().zip(&self.resolvent) {
            *v *= *r;
        }
        self.spectral.inverse_real(hat)
    }

    /// `<f, G f>_N`.
    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        let hat = self.spectral.forward(f);
        let nd = self.lattice.num_sites() as f64;
        hat.iter()
            .zip(&self.resolvent)
            .map(|(v, r)| v.norm_sqr() * r)
            .sum::<f64>()
            / (nd * nd)
    }
}

/// The quadratic functional `F_N(xi) = N^{-2d} sum_{x,y} G_N(x-y) xi(x) xi(y)`.
pub fn lyapunov_functional(kernel: &GreenKernel, xi: &[f64]) -> Result<f64> {
    kernel.lattice.check_len(xi.len())?;
    Ok(kernel.quadratic_form(xi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_sides() {
        assert!(Lattice::new(1, 2).is_err());
        assert!(Lattice::new(4, 8).is_err());
        assert!(Lattice::new(1, 1).is_ok());
    }

    #[test]
    fn every_site_has_2d_neighbours_and_edges_are_unique() {
        for (d, n) in [(1, 5), (2, 4), (3, 3)] {
            let lat = Lattice::new(d, n).unwrap();
            let mut degree = vec![0; lat.num_sites()];
            let mut pairs = std::collections::HashSet::new();
            for e in 0..lat.num_edges() {
                let (x, y) = lat.edge(e);
                degree[x] += 1;
                degree[y] += 1;
                assert!(pairs.insert((x.min(y), x.max(y), lat.edge_axis(e))));
            }
            assert!(degree.iter().all(|&k| k == 2 * d));
            assert_eq!(lat.num_edges(), d * lat.num_sites());
        }
    }

    #[test]
    fn laplacian_of_indicator() {
        let lat = Lattice::new(1, 4).unwrap();
        let l = lat.laplacian(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(l, vec![-32.0, 16.0, 0.0, 16.0]);
        assert!(lat.laplacian(&[1.0; 3]).is_err());
    }

    #[test]
    fn local_average_matches_window_sum() {
        let lat = Lattice::new(1, 8).unwrap();
        let xi: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        for x in 0..8 {
            let brute = (xi[(x + 7) % 8] + xi[x] + xi[(x + 1) % 8]) / 3.0;
            assert!((lat.local_average(&xi, 0.2, x).unwrap() - brute).abs() < 1e-14);
        }
        let all = lat.local_averages(&xi, 0.2).unwrap();
        assert!((all.iter().sum::<f64>() - xi.iter().sum::<f64>()).abs() < 1e-12);
        assert!(lat.local_average(&xi, 0.6, 0).is_err());
    }

    #[test]
    fn local_average_commutes_with_translation() {
        let lat = Lattice::new(2, 6).unwrap();
        let xi: Vec<f64> = (0..36).map(|i| ((i * 37) % 11) as f64).collect();
        let shifted: Vec<f64> = (0..36).map(|s| xi[lat.translate(s, &[1, 2])]).collect();
        let a = lat.local_averages(&xi, 0.2).unwrap();
        let b = lat.local_averages(&shifted, 0.2).unwrap();
        for s in 0..36 {
            assert!((b[s] - a[lat.translate(s, &[1, 2])]).abs() < 1e-12);
            assert!((a[s] - lat.local_average(&xi, 0.2, s).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_site_green_kernel_is_one() {
        let g = GreenKernel::new(Lattice::new(1, 1).unwrap());
        assert!((g.value(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn green_kernel_solves_its_equation() {
        for (d, n) in [(1, 9), (2, 8), (3, 5)] {
            let lat = Lattice::new(d, n).unwrap();
            let g = GreenKernel::new(lat);
            let lap = lat.laplacian(g.values()).unwrap();
            let nd = lat.num_sites() as f64;
            for (x, (&gv, &lv)) in g.values().iter().zip(&lap).enumerate() {
                let rhs = if x == 0 { nd } else { 0.0 };
                assert!((gv - lv - rhs).abs() < 1e-10 * nd);
            }
            assert!((g.mass() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn lyapunov_of_constant_is_square() {
        let lat = Lattice::new(2, 6).unwrap();
        let g = GreenKernel::new(lat);
        assert!((lyapunov_functional(&g, &[3.0; 36]).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(lyapunov_functional(&g, &[0.0; 36]).unwrap(), 0.0);
    }
}
