//! Gauss–Legendre rules and small interpolation helpers.

use std::f64::consts::PI;

/// Gauss–Legendre rule with `n` nodes on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule over `panels` equal panels.
    pub fn composite<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|j| {
                let lo = a + h * j as f64;
                self.integrate(lo, lo + h, &mut f)
            })
            .sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Four-point Lagrange stencil on a uniform grid of `len` samples spaced `h`
/// starting at `t0`. Returns the first index and the weights for value and
/// first derivative. Near the ends the stencil is shifted inward.
pub fn cubic_stencil(t0: f64, h: f64, len: usize, t: f64) -> (usize, [f64; 4], [f64; 4]) {
    if len < 4 {
        // linear fallback
        let s = ((t - t0) / h).clamp(0.0, (len - 1) as f64);
        let i = (s.floor() as usize).min(len.saturating_sub(2));
        let f = s - i as f64;
        if len == 1 {
            return (0, [1.0, 0.0, 0.0, 0.0], [0.0; 4]);
        }
        return (i, [1.0 - f, f, 0.0, 0.0], [-1.0 / h, 1.0 / h, 0.0, 0.0]);
    }
    let s = (t - t0) / h;
    let base = (s.floor() as i64 - 1).clamp(0, len as i64 - 4) as usize;
    let x = s - base as f64;
    let nodes = [0.0, 1.0, 2.0, 3.0];
    let mut w = [0.0; 4];
    let mut dw = [0.0; 4];
    for j in 0..4 {
        let mut num = 1.0;
        let mut den = 1.0;
        for m in 0..4 {
            if m != j {
                num *= x - nodes[m];
                den *= nodes[j] - nodes[m];
            }
        }
        w[j] = num / den;
        let mut deriv = 0.0;
        for q in 0..4 {
            if q == j {
                continue;
            }
            let mut prod = 1.0;
            for m in 0..4 {
                if m != j && m != q {
                    prod *= x - nodes[m];
                }
            }
            deriv += prod;
        }
        dw[j] = deriv / den / h;
    }
    (base, w, dw)
}

/// Periodic four-point Lagrange weights for fractional position `s` (in grid
/// units). Returns the index offset of the first stencil point relative to
/// `floor(s)` (always -1) and the weights.
pub fn periodic_cubic_weights(s: f64) -> (i64, [f64; 4]) {
    let i = s.floor();
    let x = s - i + 1.0;
    let mut w = [0.0; 4];
    for j in 0..4 {
        let mut num = 1.0;
        let mut den = 1.0;
        for m in 0..4 {
            if m != j {
                num *= x - m as f64;
                den *= j as f64 - m as f64;
            }
        }
        w[j] = num / den;
    }
    (i as i64 - 1, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_is_exact_for_high_degree_polynomials() {
        let r = GaussRule::new(32);
        let v = r.integrate(0.0, 1.0, |x| x.powi(63));
        assert!((v - 1.0 / 64.0).abs() < 1e-14);
        let s: f64 = r.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_rule_integrates_smooth_functions() {
        let r = GaussRule::new(16);
        let v = r.composite(0.0, PI, 4, f64::sin);
        assert!((v - 2.0).abs() < 1e-13);
    }

    #[test]
    fn cubic_stencil_reproduces_cubics() {
        let f = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let df = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let h = 0.1;
        let samples: Vec<f64> = (0..11).map(|i| f(i as f64 * h)).collect();
        for &t in &[0.0, 0.03, 0.47, 0.99, 1.0] {
            let (b, w, dw) = cubic_stencil(0.0, h, 11, t);
            let v: f64 = (0..4).map(|j| w[j] * samples[b + j]).sum();
            let d: f64 = (0..4).map(|j| dw[j] * samples[b + j]).sum();
            assert!((v - f(t)).abs() < 1e-12);
            assert!((d - df(t)).abs() < 1e-10);
        }
    }
}
