//! Fourier surrogate of the flat distance on measures and its space-time
//! analogue for relaxed measures.

use crate::error::{invalid, Result};
use crate::fields::MeasureState;
use crate::spectral::Spectral;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Default spatial cutoff per dimension.
pub fn default_k_max(dim: usize) -> usize {
    match dim {
        1 => 64,
        2 => 32,
        _ => 16,
    }
}

/// Integer modes `k` with `|k| <= k_max` (Euclidean), zero mode first.
pub fn ball_modes(dim: usize, k_max: usize) -> Vec<[i64; 3]> {
    let r = k_max as i64;
    let mut out = vec![[0i64; 3]];
    let range = |on: bool| if on { -r..=r } else { 0..=0 };
    for c in range(dim > 2) {
        for b in range(dim > 1) {
            for a in -r..=r {
                let k = [a, b, c];
                let n2 = a * a + b * b + c * c;
                if n2 > 0 && n2 <= r * r {
                    out.push(k);
                }
            }
        }
    }
    out
}

pub fn mode_norm(k: &[i64; 3]) -> f64 {
    ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt()
}

/// Phase table `e^{-2 pi i k x_a}` for `k` in `-r..=r` along one axis.
fn axis_phases(x: f64, r: i64) -> Vec<Complex64> {
    (-r..=r)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * x))
        .collect()
}

/// `mu_hat(k) = int e^{-2 pi i k.x} mu(dx)` for each requested mode. The
/// density part uses the FFT of its grid values (modes beyond the grid's
/// Nyquist band contribute zero).
pub fn fourier_coefficients(mu: &MeasureState, modes: &[[i64; 3]]) -> Vec<Complex64> {
    let d = mu.dim;
    let r = modes
        .iter()
        .flat_map(|k| k.iter().map(|v| v.abs()))
        .max()
        .unwrap_or(0);
    let mut out = vec![Complex64::new(0.0, 0.0); modes.len()];
    for a in &mu.atoms {
        let tabs: Vec<Vec<Complex64>> = (0..d).map(|i| axis_phases(a.pos[i], r)).collect();
        for (o, k) in out.iter_mut().zip(modes) {
            let mut ph = Complex64::new(a.weight, 0.0);
            for i in 0..d {
                ph *= tabs[i][(k[i] + r) as usize];
            }
            *o += ph;
        }
    }
    if let Some(g) = &mu.density {
        let s = Spectral::new(g.dim, g.n);
        let hat = s.forward(&g.data);
        let n = g.n as i64;
        let scale = 1.0 / g.nodes() as f64;
        for (o, k) in out.iter_mut().zip(modes) {
            if (0..d).any(|i| 2 * k[i].abs() >= n) {
                continue;
            }
            let mut idx = 0usize;
            let mut stride = 1usize;
            for i in 0..d {
                idx += (k[i].rem_euclid(n) as usize) * stride;
                stride *= g.n;
            }
            *o += hat[idx] * scale;
        }
    }
    out
}

/// `|dhat(0)| + sum_{0<|k|<=k_max} |dhat(k)| / (2 pi |k|)` from coefficient
/// differences on `ball_modes`.
pub fn flat_from_coefficients(modes: &[[i64; 3]], a: &[Complex64], b: &[Complex64]) -> f64 {
    modes
        .iter()
        .zip(a.iter().zip(b))
        .map(|(k, (x, y))| {
            let n = mode_norm(k);
            let diff = (x - y).norm();
            if n == 0.0 {
                diff
            } else {
                diff / (2.0 * PI * n)
            }
        })
        .sum()
}

/// The surrogate `W~(mu, nu)` with spatial cutoff `k_max`.
pub fn flat_metric(mu: &MeasureState, nu: &MeasureState, k_max: usize) -> Result<f64> {
    if mu.dim != nu.dim {
        return invalid("measures live in different dimensions");
    }
    let modes = ball_modes(mu.dim, k_max);
    Ok(flat_from_coefficients(
        &modes,
        &fourier_coefficients(mu, &modes),
        &fourier_coefficients(nu, &modes),
    ))
}

/// Space-time surrogate for relaxed measures `dt xi_t(dx)` on `[0, T]`:
/// `sum_{k0, k} |Xi_hat(k0, k) - Xi'_hat(k0, k)| / (1 + 2 pi |k| + 2 pi |k0|)`
/// with `Xi_hat(k0, k) = (1/T) int e^{-2 pi i k0 t/T} xi_hat_t(k) dt`,
/// evaluated by the midpoint rule on `time_nodes` cells. The closures
/// return spatial coefficients on `modes`.
pub fn space_time_distance<A, B>(
    modes: &[[i64; 3]],
    horizon: f64,
    k0_max: usize,
    time_nodes: usize,
    coeff_a: A,
    coeff_b: B,
) -> f64
where
    A: Fn(f64) -> Vec<Complex64> + Sync,
    B: Fn(f64) -> Vec<Complex64> + Sync,
{
    let r0 = k0_max as i64;
    let h = horizon / time_nodes as f64;
    let diffs: Vec<Vec<Complex64>> =
        crate::exec::map_replicas(crate::exec::ExecMode::default(), time_nodes, |j| {
            let t = h * (j as f64 + 0.5);
            coeff_a(t)
                .iter()
                .zip(coeff_b(t))
                .map(|(x, y)| x - y)
                .collect()
        });
    let mut total = 0.0;
    for k0 in -r0..=r0 {
        let mut acc = vec![Complex64::new(0.0, 0.0); modes.len()];
        for (j, dj) in diffs.iter().enumerate() {
            let t = h * (j as f64 + 0.5);
            let ph =
                Complex64::from_polar(1.0 / time_nodes as f64, -2.0 * PI * k0 as f64 * t / horizon);
            for (a, v) in acc.iter_mut().zip(dj) {
                *a += ph * v;
            }
        }
        for (k, a) in modes.iter().zip(&acc) {
            total += a.norm() / (1.0 + 2.0 * PI * mode_norm(k) + 2.0 * PI * (k0.abs() as f64));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Atom, FieldKind, GridField};

    fn dirac(x: f64, w: f64) -> MeasureState {
        MeasureState {
            dim: 1,
            density: None,
            atoms: vec![Atom {
                pos: [x, 0.0, 0.0],
                weight: w,
            }],
        }
    }

    #[test]
    fn two_diracs_match_mode_sum() {
        let (a, b) = (0.1, 0.35);
        let v = flat_metric(&dirac(a, 1.0), &dirac(b, 1.0), 64).unwrap();
        let mut expect = 0.0;
        for k in 1..=64 {
            let kk = k as f64;
            // |e^{-2pi i k a} - e^{-2pi i k b}| = 2 |sin(pi k (a - b))|, counted for +k and -k
            expect += 2.0 * 2.0 * (PI * kk * (a - b)).sin().abs() / (2.0 * PI * kk);
        }
        assert!((v - expect).abs() < 1e-12);
        assert_eq!(
            flat_metric(&dirac(a, 1.0), &dirac(a, 1.0), 64).unwrap(),
            0.0
        );
    }

    #[test]
    fn uniform_target_is_translation_invariant() {
        let u = MeasureState::from_density(GridField::from_fn(1, 128, FieldKind::Density, |_| 1.0));
        let w1 = flat_metric(&dirac(0.1, 1.0), &u, 32).unwrap();
        let w2 = flat_metric(&dirac(0.77, 1.0), &u, 32).unwrap();
        assert!((w1 - w2).abs() < 1e-12);
    }

    #[test]
    fn ball_mode_count() {
        assert_eq!(ball_modes(1, 4).len(), 9);
        assert_eq!(ball_modes(2, 1).len(), 5);
        assert_eq!(ball_modes(3, 1).len(), 7);
    }

    #[test]
    fn space_time_distance_of_identical_paths_vanishes() {
        let modes = ball_modes(1, 8);
        let f = |t: f64| fourier_coefficients(&dirac(t * 0.3, 1.0), &modes);
        assert_eq!(space_time_distance(&modes, 1.0, 4, 32, f, f), 0.0);
        let g = |t: f64| fourier_coefficients(&dirac(t * 0.3 + 0.01, 1.0), &modes);
        assert!(space_time_distance(&modes, 1.0, 4, 32, f, g) > 0.0);
    }
}
