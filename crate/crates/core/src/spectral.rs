//! Multi-dimensional periodic FFT on cubic grids.
//!
//! Values are stored lexicographically with axis 0 varying fastest:
//! `index = i0 + n*i1 + n*n*i2`.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone)]
pub struct Spectral {
    dim: usize,
    n: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Spectral(d={}, n={})", self.dim, self.n)
    }
}

impl Spectral {
    pub fn new(dim: usize, n: usize) -> Self {
        assert!((1..=3).contains(&dim) && n >= 1);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Spectral {
            dim,
            n,
            len: n.pow(dim as u32),
            fwd,
            inv,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.len);
        let n = self.n;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = n.pow(axis as u32);
            let block = stride * n;
            for start in (0..self.len).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for j in 0..n {
                        line[j] = buf[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for j in 0..n {
                        buf[base + j * stride] = line[j];
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform: `F(k) = sum_x f(x) e^{-2 pi i k.x/n}`.
    pub fn forward_complex(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.fwd);
    }

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_complex(&mut buf);
        buf
    }

    /// Normalized inverse transform (divides by the number of nodes).
    pub fn inverse_complex(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inv);
        let s = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse_complex(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Signed wavenumber of a one-dimensional index.
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i <= n / 2 {
            i
        } else {
            i - n
        }
    }

    pub fn is_nyquist(&self, i: usize) -> bool {
        self.n % 2 == 0 && i == self.n / 2
    }

    /// Multi-index of a flat index, padded with zeros to three axes.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut r = idx;
        for a in 0..self.dim {
            out[a] = r % self.n;
            r /= self.n;
        }
        out
    }

    pub fn mode(&self, idx: usize) -> [i64; 3] {
        let m = self.multi_index(idx);
        let mut k = [0i64; 3];
        for a in 0..self.dim {
            k[a] = self.wavenumber(m[a]);
        }
        k
    }

    /// Symbol of the first derivative along `axis` (Nyquist mode zeroed so the
    /// discrete gradient stays real and skew-adjoint).
    pub fn derivative_symbol(&self, idx: usize, axis: usize) -> f64 {
        let m = self.multi_index(idx);
        if self.is_nyquist(m[axis]) {
            0.0
        } else {
            2.0 * PI * self.wavenumber(m[axis]) as f64
        }
    }

    /// |2 pi k|^2 including the Nyquist mode.
    pub fn laplacian_symbol(&self, idx: usize) -> f64 {
        let k = self.mode(idx);
        (0..self.dim)
            .map(|a| (2.0 * PI * k[a] as f64).powi(2))
            .sum()
    }

    /// Apply a real Fourier multiplier to real data.
    pub fn apply_multiplier<F: Fn(usize) -> f64>(&self, data: &[f64], symbol: F) -> Vec<f64> {
        let mut buf = self.forward(data);
        for (i, v) in buf.iter_mut().enumerate() {
            *v *= symbol(i);
        }
        self.inverse_real(buf)
    }

    pub fn gradient(&self, data: &[f64]) -> Vec<Vec<f64>> {
        let hat = self.forward(data);
        (0..self.dim)
            .map(|a| {
                let buf: Vec<Complex64> = hat
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * Complex64::new(0.0, self.derivative_symbol(i, a)))
                    .collect();
                self.inverse_real(buf)
            })
            .collect()
    }

    pub fn divergence(&self, comps: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(comps.len(), self.dim);
        let mut acc = vec![Complex64::new(0.0, 0.0); self.len];
        for (a, c) in comps.iter().enumerate() {
            let hat = self.forward(c);
            for (i, v) in hat.into_iter().enumerate() {
                acc[i] += v * Complex64::new(0.0, self.derivative_symbol(i, a));
            }
        }
        self.inverse_real(acc)
    }

    pub fn laplacian(&self, data: &[f64]) -> Vec<f64> {
        self.apply_multiplier(data, |i| -self.laplacian_symbol(i))
    }

    /// Exact heat semigroup `exp(t/2 Delta)`.
    pub fn heat(&self, data: &[f64], t: f64) -> Vec<f64> {
        self.apply_multiplier(data, |i| (-0.5 * t * self.laplacian_symbol(i)).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        for (d, n) in [(1, 16), (2, 8), (3, 6)] {
            let s = Spectral::new(d, n);
            let data: Vec<f64> = (0..s.len())
                .map(|i| ((i * 7919) % 97) as f64 / 13.0)
                .collect();
            let back = s.inverse_real(s.forward(&data));
            for (a, b) in data.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_of_sine_mode() {
        let n = 32;
        let s = Spectral::new(2, n);
        let data: Vec<f64> = (0..s.len())
            .map(|i| {
                let m = s.multi_index(i);
                (2.0 * PI * 3.0 * m[1] as f64 / n as f64).sin()
            })
            .collect();
        let g = s.gradient(&data);
        for i in 0..s.len() {
            let m = s.multi_index(i);
            let expect = 6.0 * PI * (2.0 * PI * 3.0 * m[1] as f64 / n as f64).cos();
            assert!(g[0][i].abs() < 1e-10);
            assert!((g[1][i] - expect).abs() < 1e-9);
        }
    }
}
