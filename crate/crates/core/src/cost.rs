//! Static and dynamic costs, entropy dissipation and the mollifier
//! dissipation integral.

use crate::error::{invalid, Result};
use crate::exec::{try_map_replicas, ExecMode};
use crate::fields::optimal_control;
use crate::fields::{node_position, DensityPath, MeasureState, VectorField};
use crate::paths::Mollifier;
use crate::quad::GaussRule;
use serde::{Deserialize, Serialize};

/// `S_rho(xi) = <1/rho, xi> - int log(u/rho) dx - 1`, with `u` the density
/// part. Returns `+inf` when the density is missing or not positive.
pub fn static_cost(mu: &MeasureState, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return invalid(format!("reference density must be positive, got {rho}"));
    }
    let density = match &mu.density {
        Some(d) => d,
        None => return Ok(f64::INFINITY),
    };
    let vals = density.component(0);
    if vals.iter().any(|v| !(*v > 0.0)) {
        return Ok(f64::INFINITY);
    }
    let log_mean = vals.iter().map(|v| (v / rho).ln()).sum::<f64>() / vals.len() as f64;
    Ok(mu.total_mass() / rho - log_mean - 1.0)
}

/// Value of a time integral and the change at the last refinement.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct TimeIntegral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

pub const TIME_TOLERANCE: f64 = 1e-4;
const MAX_DOUBLINGS: usize = 6;

/// `int_0^T f(t) dt`, split at `cuts`. Each piece is halved and mapped by
/// `t = a + s^2` and `t = b - s^2` from its endpoints, which absorbs `|t - t0|^{-1/2}`
/// behaviour; composite 8-point Gauss with 64 nodes per piece, doubled until
/// the relative change is below `tol`.
pub fn time_integral<F>(horizon: f64, cuts: &[f64], tol: f64, f: F) -> Result<TimeIntegral>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    let mut pts: Vec<f64> = cuts
        .iter()
        .cloned()
        .filter(|t| *t > 0.0 && *t < horizon)
        .collect();
    pts.push(0.0);
    pts.push(horizon);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let rule = GaussRule::new(8);
    let level = |panels: usize| -> Result<(f64, usize)> {
        // (t, weight) over all pieces
        let mut nodes = Vec::new();
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let half = (mid - a).sqrt();
            let h = half / panels as f64;
            for p in 0..panels {
                for (s, ws) in rule.mapped(h * p as f64, h * (p + 1) as f64) {
                    nodes.push((a + s * s, 2.0 * s * ws));
                    nodes.push((b - s * s, 2.0 * s * ws));
                }
            }
        }
        let vals = try_map_replicas(ExecMode::default(), nodes.len(), |i| f(nodes[i].0))?;
        Ok((
            nodes.iter().zip(&vals).map(|((_, w), v)| w * v).sum(),
            nodes.len(),
        ))
    };
    let mut panels = 2;
    let (mut prev, mut evals) = level(panels)?;
    let mut err = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        panels *= 2;
        let (next, e) = level(panels)?;
        evals += e;
        err = (next - prev).abs();
        prev = next;
        if err <= tol * next.abs() || next == 0.0 {
            break;
        }
    }
    if !prev.is_finite() {
        return Ok(TimeIntegral {
            value: f64::INFINITY,
            error: f64::INFINITY,
            evaluations: evals,
        });
    }
    Ok(TimeIntegral {
        value: prev,
        error: err,
        evaluations: evals,
    })
}

fn path_cuts(path: &dyn DensityPath, extra: &[f64]) -> Vec<f64> {
    let mut c = path.singular_times();
    c.extend_from_slice(extra);
    c
}

/// `J = (1/2) int int u^2 |grad H|^2 dx dt` with `H` from the weighted
/// elliptic solve on a grid of side `n`.
pub fn dynamic_cost(path: &dyn DensityPath, n: usize, breakpoints: &[f64]) -> Result<TimeIntegral> {
    time_integral(
        path.horizon(),
        &path_cuts(path, breakpoints),
        TIME_TOLERANCE,
        |t| Ok(0.5 * optimal_control(path, t, n)?.energy()),
    )
}

fn grid_mean<F: Fn(&[f64]) -> f64>(dim: usize, n: usize, f: F) -> f64 {
    let len = n.pow(dim as u32);
    (0..len)
        .map(|i| f(&node_position(dim, n, i)[..dim]))
        .sum::<f64>()
        / len as f64
}

/// `(1/2) int int |grad log u|^2`; `+inf` if `u` touches zero on the grid.
pub fn entropy_dissipation(
    path: &dyn DensityPath,
    n: usize,
    breakpoints: &[f64],
) -> Result<TimeIntegral> {
    let d = path.dim();
    time_integral(
        path.horizon(),
        &path_cuts(path, breakpoints),
        TIME_TOLERANCE,
        |t| {
            Ok(0.5
                * grid_mean(d, n, |x| {
                    let u = path.value(t, x);
                    if !(u > 0.0) {
                        return f64::INFINITY;
                    }
                    let g = path.gradient(t, x);
                    g[..d].iter().map(|v| v * v).sum::<f64>() / (u * u)
                }))
        },
    )
}

/// `(1/2) int int |g|^2` for a supplied control.
pub fn competitor_cost(
    g: &dyn VectorField,
    horizon: f64,
    n: usize,
    cuts: &[f64],
) -> Result<TimeIntegral> {
    let d = g.dim();
    time_integral(horizon, cuts, TIME_TOLERANCE, |t| {
        Ok(0.5
            * grid_mean(d, n, |x| {
                g.value(t, x)[..d].iter().map(|v| v * v).sum::<f64>()
            }))
    })
}

/// Value of the dissipation integral and its bound.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Dissipation {
    pub eps: f64,
    pub sigma: f64,
    pub theta: f64,
    pub value: f64,
    pub bound: f64,
}

/// `int eps rho_s / (1 + eps rho_s) |grad log rho_s|^2 dx` against
/// `C_theta eps^{1-theta} s^{d theta - 2}`.
pub fn dissipation_integral(
    eps: f64,
    sigma: f64,
    theta: f64,
    mol: &Mollifier,
) -> Result<Dissipation> {
    if !(sigma > 0.0 && sigma < 0.5) {
        return invalid(format!("sigma must lie in (0, 1/2), got {sigma}"));
    }
    if !(eps > 0.0) || !(theta > 0.0 && theta < 1.0) {
        return invalid("eps must be positive and theta in (0, 1)");
    }
    // bump_energy carries the factor 1/4 of (1/2 grad log)^2
    let value = 4.0 * mol.bump_energy(eps, 1.0, sigma, 0.0, 0.0, 1);
    let d = mol.dim() as f64;
    let bound = mol.c_theta(theta) * eps.powf(1.0 - theta) * sigma.powf(d * theta - 2.0);
    Ok(Dissipation {
        eps,
        sigma,
        theta,
        value,
        bound,
    })
}

/// Grid sweep of the dissipation integral.
pub fn dissipation_sweep(
    dim: usize,
    theta: f64,
    eps: &[f64],
    sigma: &[f64],
) -> Result<Vec<Dissipation>> {
    let mol = Mollifier::new(dim)?;
    let mut rows = Vec::new();
    for &e in eps {
        for &s in sigma {
            rows.push(dissipation_integral(e, s, theta, &mol)?);
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log value` against `log sigma` for each `eps`.
pub fn sigma_exponents(rows: &[Dissipation]) -> Vec<(f64, f64)> {
    let mut eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps.dedup();
    eps.into_iter()
        .map(|e| {
            let sel: Vec<&Dissipation> = rows.iter().filter(|r| r.eps == e).collect();
            let x: Vec<f64> = sel.iter().map(|r| r.sigma.ln()).collect();
            let y: Vec<f64> = sel.iter().map(|r| r.value.ln()).collect();
            (e, crate::stats::linear_fit(&x, &y).0)
        })
        .collect()
}

/// Terms of the entropy balance along a path driven by `g`:
/// `S(u_T) - S(u_0) = -D + X` with `D = (1/2)||grad log u||^2` and
/// `X = int <grad log u, g>`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub s0: f64,
    pub s_t: f64,
    pub dissipation: f64,
    pub cross: f64,
    pub control_energy: f64,
    /// `S_T - S_0 + D - X`.
    pub identity_residual: f64,
    /// `S_0 + 2 (1/2 ||g||^2) - S_T - D/2`, nonnegative by Young's inequality.
    pub slack: f64,
}

pub fn energy_balance(
    path: &dyn DensityPath,
    g: &dyn VectorField,
    n: usize,
    rho: f64,
    cuts: &[f64],
) -> Result<EnergyBalance> {
    let d = path.dim();
    let horizon = path.horizon();
    let s0 = static_cost(&MeasureState::from_density(path.grid(0.0, n)), rho)?;
    let s_t = static_cost(&MeasureState::from_density(path.grid(horizon, n)), rho)?;
    let cuts = path_cuts(path, cuts);
    let dissipation = entropy_dissipation(path, n, &cuts)?.value;
    let cross = time_integral(horizon, &cuts, 1e-6, |t| {
        Ok(grid_mean(d, n, |x| {
            let u = path.value(t, x);
            let gu = path.gradient(t, x);
            let gv = g.value(t, x);
            (0..d).map(|a| gu[a] * gv[a]).sum::<f64>() / u
        }))
    })?
    .value;
    let control_energy = competitor_cost(g, horizon, n, &cuts)?.value;
    Ok(EnergyBalance {
        s0,
        s_t,
        dissipation,
        cross,
        control_energy,
        identity_residual: s_t - s0 + dissipation - cross,
        slack: s0 + 2.0 * control_energy - s_t - 0.5 * dissipation,
    })
}

/// Costs of a path, serialized into run summaries.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub static_initial: f64,
    pub static_final: f64,
    pub j_optimal: f64,
    pub j_optimal_error: f64,
    pub j_competitor: Option<f64>,
    pub j_competitor_error: Option<f64>,
    pub dissipation: f64,
    pub bounds: Vec<(String, f64)>,
}

impl CostReport {
    pub fn consistent(&self, tol: f64) -> bool {
        let nonneg = self.static_initial >= 0.0
            && self.static_final >= 0.0
            && self.j_optimal >= 0.0
            && self.dissipation >= 0.0;
        let below = self
            .j_competitor
            .map_or(true, |c| self.j_optimal <= c * (1.0 + tol) + tol);
        nonneg && below
    }
}

pub fn cost_report(
    path: &dyn DensityPath,
    competitor: Option<&dyn VectorField>,
    n: usize,
    rho: f64,
    cuts: &[f64],
) -> Result<CostReport> {
    let opt = dynamic_cost(path, n, cuts)?;
    let comp = match competitor {
        Some(g) => Some(competitor_cost(
            g,
            path.horizon(),
            n,
            &path_cuts(path, cuts),
        )?),
        None => None,
    };
    Ok(CostReport {
        static_initial: static_cost(&MeasureState::from_density(path.grid(0.0, n)), rho)?,
        static_final: static_cost(
            &MeasureState::from_density(path.grid(path.horizon(), n)),
            rho,
        )?,
        j_optimal: opt.value,
        j_optimal_error: opt.error,
        j_competitor: comp.map(|c| c.value),
        j_competitor_error: comp.map(|c| c.error),
        dissipation: entropy_dissipation(path, n, cuts)?.value,
        bounds: Vec::new(),
    })
}

/// Exact one-dimensional optimal cost at a fixed time: with
/// `F' = -dtu + (1/2) u''` and `u^2 H' = F - C`, the constant `C` making `H`
/// periodic is `int F/u^2 / int 1/u^2`, and the cost is `int (F - C)^2/u^2`.
pub fn optimal_energy_1d(u: &[f64], rhs: &[f64]) -> f64 {
    let n = u.len();
    let h = 1.0 / n as f64;
    // cumulative trapezoid of the right-hand side, mean removed
    let mean = rhs.iter().sum::<f64>() / n as f64;
    let mut f = vec![0.0; n];
    for i in 1..n {
        f[i] = f[i - 1] + 0.5 * h * (rhs[i - 1] + rhs[i] - 2.0 * mean);
    }
    let a: f64 = u.iter().map(|v| 1.0 / (v * v)).sum();
    let b: f64 = f.iter().zip(u).map(|(fi, v)| fi / (v * v)).sum();
    let c = b / a;
    f.iter()
        .zip(u)
        .map(|(fi, v)| (fi - c).powi(2) / (v * v))
        .sum::<f64>()
        * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticPath, FieldKind, GridField};
    use std::f64::consts::PI;

    #[test]
    fn static_cost_cases() {
        let n = 64;
        let flat =
            MeasureState::from_density(GridField::from_fn(1, n, FieldKind::Density, |_| 0.7));
        assert!(static_cost(&flat, 0.7).unwrap().abs() < 1e-14);
        let double =
            MeasureState::from_density(GridField::from_fn(1, n, FieldKind::Density, |_| 1.4));
        assert!((static_cost(&double, 0.7).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-14);
        let hole = MeasureState::from_density(GridField::from_fn(1, n, FieldKind::Density, |x| {
            if x[0] < 0.5 {
                0.0
            } else {
                1.0
            }
        }));
        assert_eq!(static_cost(&hole, 1.0).unwrap(), f64::INFINITY);
        assert!(static_cost(&flat, 0.0).is_err());
    }

    #[test]
    fn time_integral_handles_inverse_square_root() {
        let v = time_integral(1.0, &[0.3], 1e-10, |t| Ok(1.0 / (t - 0.3).abs().sqrt())).unwrap();
        let exact = 2.0 * 0.3f64.sqrt() + 2.0 * 0.7f64.sqrt();
        assert!((v.value - exact).abs() < 1e-10, "{}", v.value);
    }

    #[test]
    fn heat_flow_is_free_and_constants_do_not_dissipate() {
        let heat = AnalyticPath::new(1, 0.5, (0.5, 1.5), |t, x: &[f64]| {
            1.0 + 0.5 * (-2.0 * PI * PI * t).exp() * (2.0 * PI * x[0]).cos()
        })
        .with_time_derivative(|t, x: &[f64]| {
            -PI * PI * (-2.0 * PI * PI * t).exp() * (2.0 * PI * x[0]).cos()
        });
        assert!(dynamic_cost(&heat, 64, &[]).unwrap().value < 1e-12);
        let flat = AnalyticPath::stationary(1, 1.0, (1.0, 1.0), |_: &[f64]| 1.0);
        assert_eq!(entropy_dissipation(&flat, 32, &[]).unwrap().value, 0.0);
    }

    #[test]
    fn frozen_profile_dissipation_matches_reference() {
        let t = 0.7;
        let p = AnalyticPath::stationary(1, t, (0.5, 1.5), |x: &[f64]| {
            1.0 + 0.5 * (2.0 * PI * x[0]).cos()
        });
        let got = entropy_dissipation(&p, 256, &[]).unwrap().value;
        let reference = 0.5
            * t
            * GaussRule::new(32).composite(0.0, 1.0, 64, |x| {
                let u = 1.0 + 0.5 * (2.0 * PI * x).cos();
                let du = -PI * (2.0 * PI * x).sin();
                (du / u).powi(2)
            });
        assert!(
            (got - reference).abs() < 1e-8 * reference,
            "{got} {reference}"
        );
    }

    #[test]
    fn manufactured_cost_matches_closed_form() {
        // u = 2 + cos 2 pi x, H = sin 2 pi x, frozen, dtu = -div(u^2 H') + (1/2) u''
        let u = |x: f64| 2.0 + (2.0 * PI * x).cos();
        let dtu = move |x: f64| {
            let (c, s) = ((2.0 * PI * x).cos(), (2.0 * PI * x).sin());
            let uu = u(x);
            let hp = 2.0 * PI * c;
            let d_flux = 2.0 * uu * (-2.0 * PI * s) * hp + uu * uu * (-4.0 * PI * PI * s);
            -d_flux + 0.5 * (-4.0 * PI * PI * c)
        };
        let p = AnalyticPath::new(1, 1.0, (1.0, 3.0), move |_, x: &[f64]| u(x[0]))
            .with_time_derivative(move |_, x: &[f64]| dtu(x[0]));
        let j = dynamic_cost(&p, 256, &[]).unwrap().value;
        let exact = 0.5
            * GaussRule::new(32).composite(0.0, 1.0, 32, |x| {
                (u(x) * 2.0 * PI * (2.0 * PI * x).cos()).powi(2)
            });
        assert!((j - exact).abs() < 1e-5 * exact, "{j} {exact}");
    }

    #[test]
    fn one_dimensional_formula_agrees_with_elliptic_solve() {
        let n = 4096;
        let u = GridField::from_fn(1, n, FieldKind::Density, |x| {
            1.5 + (2.0 * PI * x[0]).sin() * 0.4 + 0.3 * (6.0 * PI * x[0]).cos()
        });
        let dtu = GridField::from_fn(1, n, FieldKind::Density, |x| {
            (4.0 * PI * x[0]).sin() + 0.2 * (2.0 * PI * x[0]).cos()
        });
        let sol = crate::fields::solve_control(&u, &dtu, 1e-10, 10_000).unwrap();
        let lap = crate::spectral::Spectral::new(1, n).laplacian(u.component(0));
        let rhs: Vec<f64> = dtu
            .component(0)
            .iter()
            .zip(&lap)
            .map(|(a, l)| -a + 0.5 * l)
            .collect();
        let exact = optimal_energy_1d(u.component(0), &rhs);
        assert!(
            (sol.energy() - exact).abs() < 1e-5 * exact,
            "{} {exact}",
            sol.energy()
        );
    }

    #[test]
    fn dissipation_value_matches_brute_force() {
        let mol = Mollifier::new(1).unwrap();
        let (eps, sigma) = (1.0, 0.25);
        let v = dissipation_integral(eps, sigma, 0.5, &mol).unwrap().value;
        let m = 1_000_000;
        let h = sigma / m as f64;
        let brute: f64 = (0..m)
            .map(|i| {
                let x = -0.5 * sigma + (i as f64 + 0.5) * h;
                let q = x.abs() / sigma;
                let r = eps * mol.value(q) / sigma;
                let dl = mol.dlog(q) / sigma;
                r / (1.0 + r) * dl * dl
            })
            .sum::<f64>()
            * h;
        assert!((v - brute).abs() < 1e-6 * brute.max(1.0), "{v} {brute}");
    }

    #[test]
    fn dissipation_monotone_in_eps_and_below_bound_in_2d() {
        let mol = Mollifier::new(2).unwrap();
        let vals: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&e| dissipation_integral(e, 0.1, 0.5, &mol).unwrap().value)
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2]);
        for i in 0..=3 {
            for j in 2..=6 {
                let r = dissipation_integral(10f64.powi(-i), 2f64.powi(-j), 0.5, &mol).unwrap();
                assert!(r.value <= r.bound, "{r:?}");
            }
        }
        assert!(dissipation_integral(1.0, 0.5, 0.5, &mol).is_err());
    }
}
