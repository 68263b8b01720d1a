//! Local functionals of the configuration, the drift functional, the
//! replacement statistic and martingale diagnostics.

use crate::engine::{jump_values, Trajectory};
use crate::error::{invalid, Result};
use crate::lattice::Lattice;
use crate::moments;
use crate::quad::GaussRule;
use crate::tilt::{generator_apply, tau, LinearObservable, TiltSpec};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `Psi_K(a, b) = int_0^1 (p B - (1-p) A)((1-p) a - p b) dp`.
pub fn psi_k(a: f64, b: f64, k: f64) -> f64 {
    let ca = tau(a, k);
    let cb = tau(b, k);
    (a * cb + b * ca) / 6.0 - (b * cb + a * ca) / 3.0
}

/// `Upsilon_K(a, b) = int_0^1 (p B - (1-p) A)^2 dp`.
pub fn upsilon_k(a: f64, b: f64, k: f64) -> f64 {
    let ca = tau(a, k);
    let cb = tau(b, k);
    (ca * ca - ca * cb + cb * cb) / 3.0
}

/// `Psi_K` by 64-node quadrature of its defining integral.
pub fn psi_k_quadrature(a: f64, b: f64, k: f64) -> f64 {
    let (ca, cb) = (tau(a, k), tau(b, k));
    GaussRule::new(64).integrate(0.0, 1.0, |p| {
        (p * cb - (1.0 - p) * ca) * ((1.0 - p) * a - p * b)
    })
}

pub fn upsilon_k_quadrature(a: f64, b: f64, k: f64) -> f64 {
    let (ca, cb) = (tau(a, k), tau(b, k));
    GaussRule::new(64).integrate(0.0, 1.0, |p| (p * cb - (1.0 - p) * ca).powi(2))
}

/// `N^{2-d} sum_{x~y} (phi(y) - phi(x)) chi_K (H(x) - H(y)) Psi_K(xi(x), xi(y))`.
pub fn drift_functional(
    spec: &TiltSpec,
    t: f64,
    xi: &[f64],
    phi: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let lat = spec.lattice;
    lat.check_len(xi.len())?;
    let d = lat.dim();
    let phis: Vec<f64> = (0..lat.num_sites())
        .map(|s| phi(&lat.position(s)[..d]))
        .collect();
    let mut coef = Vec::new();
    spec.coefficients(t, &mut coef);
    let mut sum = 0.0;
    for (e, c) in coef.iter().enumerate() {
        let (x, y) = lat.edge(e);
        sum += (phis[y] - phis[x]) * c * psi_k(xi[x], xi[y], spec.cutoff);
    }
    Ok(sum * (lat.side() as f64).powi(2 - d as i32))
}

/// Growth class of a local function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    Bounded,
    Linear,
}

type LocalEval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type LocalMean = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A function of the energies at finitely many lattice offsets together
/// with its average under the product exponential law of mean `rho`.
#[derive(Clone)]
pub struct LocalFunction {
    pub offsets: Vec<[i64; 3]>,
    eval: LocalEval,
    mean: LocalMean,
    pub growth: Growth,
}

impl std::fmt::Debug for LocalFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalFunction")
            .field("offsets", &self.offsets)
            .field("growth", &self.growth)
            .finish()
    }
}

impl LocalFunction {
    pub fn new<F, M>(offsets: Vec<[i64; 3]>, growth: Growth, eval: F, mean: M) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        M: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        LocalFunction {
            offsets,
            eval: Arc::new(eval),
            mean: Arc::new(mean),
            growth,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![[0, 0, 0]], Growth::Bounded, move |_| c, move |_| c)
    }

    /// `F(xi) = xi(0)`.
    pub fn site_energy() -> Self {
        Self::new(vec![[0, 0, 0]], Growth::Linear, |v| v[0], |rho| rho)
    }

    /// `F(xi) = min(xi(0), cap)`, bounded and Lipschitz.
    pub fn capped_energy(cap: f64) -> Self {
        Self::new(
            vec![[0, 0, 0]],
            Growth::Bounded,
            move |v| v[0].min(cap),
            move |rho| moments::m1(rho, cap),
        )
    }

    /// `F(xi) = xi(0) (xi(e_1) ^ K)`.
    pub fn tilted_product(k: f64) -> Self {
        Self::new(
            vec![[0, 0, 0], [1, 0, 0]],
            Growth::Linear,
            move |v| v[0] * tau(v[1], k),
            move |rho| rho * moments::m1(rho, k),
        )
    }

    /// `F(tau_x xi)`.
    pub fn at(&self, lattice: &Lattice, xi: &[f64], site: usize) -> f64 {
        let d = lattice.dim();
        let mut vals = [0.0; 8];
        let mut buf;
        let slice: &mut [f64] = if self.offsets.len() <= 8 {
            &mut vals[..self.offsets.len()]
        } else {
            buf = vec![0.0; self.offsets.len()];
            &mut buf
        };
        for (v, off) in slice.iter_mut().zip(&self.offsets) {
            *v = xi[lattice.translate(site, &off[..d])];
        }
        (self.eval)(slice)
    }

    pub fn mean(&self, rho: f64) -> f64 {
        (self.mean)(rho)
    }
}

/// Value of the replacement statistic and a flag for coarse snapshots.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReplacementValue {
    pub value: f64,
    pub coarse_snapshots: bool,
}

/// `int_0^T N^{-d} sum_x phi(t, x) [F(tau_x xi_t) - Fbar(local average)] dt`,
/// trapezoid over the stored snapshots.
pub fn replacement_statistic(
    traj: &Trajectory,
    f: &LocalFunction,
    phi: &dyn Fn(f64, &[f64]) -> f64,
    eps: f64,
) -> Result<ReplacementValue> {
    let lat = traj.lattice;
    if traj.times.len() < 2 {
        return invalid("replacement statistic needs at least two snapshots");
    }
    let d = lat.dim();
    let n = lat.side() as f64;
    let w = lat.site_weight();
    let per_snapshot: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.snapshots)
        .map(|(&t, xi)| {
            let avg = lat.local_averages(xi, eps)?;
            Ok((0..lat.num_sites())
                .map(|x| phi(t, &lat.position(x)[..d]) * (f.at(&lat, xi, x) - f.mean(avg[x])))
                .sum::<f64>()
                * w)
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut max_gap: f64 = 0.0;
    for i in 1..traj.times.len() {
        let h = traj.times[i] - traj.times[i - 1];
        max_gap = max_gap.max(h);
        value += 0.5 * h * (per_snapshot[i] + per_snapshot[i - 1]);
    }
    let coarse = max_gap > 100.0 / (n * n);
    if coarse {
        log::warn!("snapshot spacing {max_gap:e} exceeds 100/N^2");
    }
    Ok(ReplacementValue {
        value,
        coarse_snapshots: coarse,
    })
}

/// Path of the martingale `M_t` for a linear observable and its empirical
/// quadratic variation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub quadratic_variation: f64,
    /// True when computed event by event from the flux log.
    pub event_exact: bool,
}

impl MartingaleReport {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }
}

/// `M_t = <phi, pi(xi_t)> - <phi, pi(xi_0)> - int_0^t L <phi, pi> ds`.
///
/// With a flux log and an initial configuration the generator is integrated
/// exactly between events (Gauss nodes in time for tilted dynamics);
/// otherwise the trapezoid rule over snapshots is used.
pub fn martingale_residual(
    traj: &Trajectory,
    init: &[f64],
    phi: &[f64],
    tilt: Option<&TiltSpec>,
) -> Result<MartingaleReport> {
    let lat = traj.lattice;
    lat.check_len(phi.len())?;
    let obs = LinearObservable {
        lattice: lat,
        phi: phi.to_vec(),
    };
    let gen = |xi: &[f64], t: f64| generator_apply(&obs, &lat, xi, tilt.map(|s| (s, t)));
    match &traj.flux {
        Some(flux) => {
            lat.check_len(init.len())?;
            let rule = GaussRule::new(4);
            let mut xi = init.to_vec();
            let mut m = 0.0;
            let mut qv = 0.0;
            let mut times = vec![0.0];
            let mut values = vec![0.0];
            let mut t_prev = 0.0;
            let integrate = |xi: &[f64], a: f64, b: f64| -> Result<f64> {
                if b <= a {
                    return Ok(0.0);
                }
                match tilt {
                    None => Ok((b - a) * gen(xi, a)?),
                    Some(_) => {
                        let mut s = 0.0;
                        for (t, w) in rule.mapped(a, b) {
                            s += w * gen(xi, t)?;
                        }
                        Ok(s)
                    }
                }
            };
            for ev in flux {
                m -= integrate(&xi, t_prev, ev.t)?;
                let (x, y) = lat.edge(ev.edge);
                let (nx, ny) = jump_values(xi[x], xi[y], ev.p);
                let jump = lat.site_weight() * (phi[x] * (nx - xi[x]) + phi[y] * (ny - xi[y]));
                xi[x] = nx;
                xi[y] = ny;
                m += jump;
                qv += jump * jump;
                times.push(ev.t);
                values.push(m);
                t_prev = ev.t;
            }
            m -= integrate(&xi, t_prev, traj.horizon)?;
            times.push(traj.horizon);
            values.push(m);
            Ok(MartingaleReport {
                times,
                values,
                quadratic_variation: qv,
                event_exact: true,
            })
        }
        None => {
            if traj.snapshots.is_empty() {
                return invalid("martingale residual needs a flux log or snapshots");
            }
            let lin: Vec<f64> = traj.snapshots.iter().map(|s| lat.inner(phi, s)).collect();
            let lg: Vec<f64> = traj
                .snapshots
                .iter()
                .zip(&traj.times)
                .map(|(s, &t)| gen(s, t))
                .collect::<Result<_>>()?;
            let mut values = vec![0.0];
            let mut qv = 0.0;
            let mut drift = 0.0;
            for i in 1..lin.len() {
                drift += 0.5 * (traj.times[i] - traj.times[i - 1]) * (lg[i] + lg[i - 1]);
                let m = lin[i] - lin[0] - drift;
                let inc = m - values[i - 1];
                qv += inc * inc;
                values.push(m);
            }
            Ok(MartingaleReport {
                times: traj.times.clone(),
                values,
                quadratic_variation: qv,
                event_exact: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{sample_equilibrium, simulate, EnergyConfig, Equilibrium, SimOptions};
    use crate::rng::seeded;

    #[test]
    fn closed_forms_match_integrals() {
        for &a in &[0.0, 0.3, 1.0, 2.5, 7.0] {
            for &b in &[0.0, 0.7, 3.0, 12.0] {
                for &k in &[0.5, 2.0, 100.0] {
                    assert!(
                        (psi_k(a, b, k) - psi_k_quadrature(a, b, k)).abs() < 1e-12 * (1.0 + a * b)
                    );
                    assert!(
                        (upsilon_k(a, b, k) - upsilon_k_quadrature(a, b, k)).abs()
                            < 1e-12 * (1.0 + a * b)
                    );
                }
            }
        }
        assert_eq!(psi_k(0.0, 0.0, 1.0), 0.0);
        assert_eq!(upsilon_k(0.0, 0.0, 1.0), 0.0);
        assert!((psi_k(0.8, 0.8, 2.0) + 0.64 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn replacement_of_constant_vanishes_and_matches_brute_force() {
        let lat = Lattice::new(1, 8).unwrap();
        let init =
            sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut seeded(3)).unwrap();
        let tr = simulate(
            &init,
            &SimOptions::new(0.05).with_snapshots(11),
            &mut seeded(4),
            4,
        )
        .unwrap();
        let phi = |t: f64, x: &[f64]| (1.0 + t) * (6.0 * x[0]).cos();
        let c = replacement_statistic(&tr, &LocalFunction::constant(2.0), &phi, 0.25).unwrap();
        assert_eq!(c.value, 0.0);
        let f = LocalFunction::capped_energy(1.0);
        let v = replacement_statistic(&tr, &f, &phi, 0.25).unwrap().value;
        // direct summation: window of radius 2 sites
        let mut total = 0.0;
        for i in 1..tr.times.len() {
            let mut g = [0.0; 2];
            for (j, idx) in [i - 1, i].iter().enumerate() {
                let xi = &tr.snapshots[*idx];
                let t = tr.times[*idx];
                for x in 0..8usize {
                    let mut s = 0.0;
                    for o in -2i64..=2 {
                        s += xi[((x as i64 + o).rem_euclid(8)) as usize];
                    }
                    let avg = s / 5.0;
                    let fbar = 1.0 - (-1.0 / avg).exp();
                    let fbar = avg * fbar;
                    g[j] += phi(t, &[x as f64 / 8.0]) * (xi[x].min(1.0) - fbar) / 8.0;
                }
            }
            total += 0.5 * (tr.times[i] - tr.times[i - 1]) * (g[0] + g[1]);
        }
        assert!((v - total).abs() < 1e-12, "{v} {total}");
    }

    #[test]
    fn local_function_ignores_sites_outside_support() {
        let lat = Lattice::new(2, 5).unwrap();
        let f = LocalFunction::tilted_product(1.5);
        let mut xi: Vec<f64> = (0..25).map(|i| 0.1 * i as f64).collect();
        let before = f.at(&lat, &xi, 7);
        for s in 0..25 {
            if s != 7 && s != lat.shift(7, 0, 1) {
                xi[s] += 3.0;
            }
        }
        assert_eq!(f.at(&lat, &xi, 7), before);
    }

    #[test]
    fn martingale_vanishes_without_jumps() {
        let lat = Lattice::new(1, 8).unwrap();
        let init = EnergyConfig::constant(lat, 1.3).unwrap();
        let tr = simulate(
            &init,
            &SimOptions::new(0.02).with_flux(true),
            &mut seeded(5),
            5,
        )
        .unwrap();
        let phi: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        // a constant configuration is invariant in law but not pathwise; use phi constant instead
        let flat = vec![1.0; 8];
        let rep = martingale_residual(&tr, &init.energies, &flat, None).unwrap();
        assert!(rep.values.iter().all(|v| v.abs() < 1e-12));
        let rep = martingale_residual(&tr, &init.energies, &phi, None).unwrap();
        assert!(rep.event_exact && rep.quadratic_variation > 0.0);
    }
}
