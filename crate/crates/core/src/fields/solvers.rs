use super::*;
use crate::error::invalid;

/// Exact heat semigroup `exp(t/2 Delta)` applied to every component.
pub fn heat_step(f: &GridField, t: f64) -> Result<GridField> {
    if !(t >= 0.0) {
        return invalid(format!("heat step duration must be nonnegative, got {t}"));
    }
    let s = Spectral::new(f.dim, f.n);
    let mut out = f.clone();
    for c in 0..f.comps {
        let v = s.heat(f.component(c), t);
        out.component_mut(c).copy_from_slice(&v);
    }
    Ok(out)
}

/// Output of the weighted elliptic solve.
#[derive(Clone, Debug)]
pub struct ControlSolution {
    /// Zero-mean potential `H`.
    pub potential: GridField,
    /// Control `g = u grad H`.
    pub control: GridField,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Mean of the right-hand side removed before solving.
    pub compatibility_defect: f64,
}

impl ControlSolution {
    /// `int u^2 |grad H|^2 dx = int |g|^2 dx`.
    pub fn energy(&self) -> f64 {
        self.control.l2_squared()
    }
}

pub const CONTROL_TOLERANCE: f64 = 1e-9;
pub const CONTROL_MAX_ITER: usize = 10_000;

fn is_null_mode(s: &Spectral, idx: usize) -> bool {
    (0..s.dim()).all(|a| s.derivative_symbol(idx, a) == 0.0)
}

/// Solve `div(u^2 grad H) = -dtu + (1/2) Delta u` by preconditioned
/// conjugate gradients on mean-zero fields.
pub fn solve_control(
    u: &GridField,
    dtu: &GridField,
    tol: f64,
    max_iter: usize,
) -> Result<ControlSolution> {
    u.check_same_grid(dtu)?;
    if u.min() <= 0.0 {
        return Err(KmpError::Numerical(
            "control solve needs a strictly positive density".into(),
        ));
    }
    let s = Spectral::new(u.dim, u.n);
    let len = s.len();
    let dim = u.dim;
    let w: Vec<f64> = u.data.iter().map(|v| v * v).collect();
    let ubar = u.mean();
    let lap = s.laplacian(&u.data);
    let raw: Vec<f64> = dtu
        .data
        .iter()
        .zip(&lap)
        .map(|(a, l)| a - 0.5 * l)
        .collect();
    // project out constants and modes with vanishing gradient symbol
    let mut hat = s.forward(&raw);
    let defect = hat[0].re / len as f64;
    for (i, v) in hat.iter_mut().enumerate() {
        if is_null_mode(&s, i) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    let f = s.inverse_real(hat);
    let apply = |h: &[f64]| -> Vec<f64> {
        let g = s.gradient(h);
        let flux: Vec<Vec<f64>> = g
            .into_iter()
            .map(|c| c.iter().zip(&w).map(|(a, b)| a * b).collect())
            .collect();
        s.divergence(&flux).into_iter().map(|v| -v).collect()
    };
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut hat = s.forward(r);
        for (i, v) in hat.iter_mut().enumerate() {
            let sym: f64 = (0..dim).map(|a| s.derivative_symbol(i, a).powi(2)).sum();
            if sym == 0.0 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v /= ubar * ubar * sym;
            }
        }
        s.inverse_real(hat)
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let fnorm = dot(&f, &f).sqrt();
    let mut x = vec![0.0; len];
    let mut iterations = 0;
    let mut rel = 0.0;
    if fnorm > 0.0 {
        let mut r = f.clone();
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            let ap = apply(&p);
            let alpha = rz / dot(&p, &ap);
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rel = dot(&r, &r).sqrt() / fnorm;
            if rel <= tol {
                break;
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        // true residual
        let ax = apply(&x);
        rel = ax
            .iter()
            .zip(&f)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / fnorm;
        if rel > tol * 10.0 {
            return Err(KmpError::NonConvergence {
                iterations,
                residual: rel,
            });
        }
    }
    let mean = x.iter().sum::<f64>() / len as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
    let grad = s.gradient(&x);
    let control: Vec<Vec<f64>> = grad
        .into_iter()
        .map(|c| c.iter().zip(&u.data).map(|(a, b)| a * b).collect())
        .collect();
    Ok(ControlSolution {
        potential: GridField {
            dim,
            n: u.n,
            comps: 1,
            kind: FieldKind::Potential,
            data: x,
        },
        control: GridField::from_components(dim, u.n, FieldKind::Velocity, control),
        iterations,
        relative_residual: rel,
        compatibility_defect: defect,
    })
}

/// Optimal control of a density path at time `t` on a grid of side `n`.
pub fn optimal_control(path: &dyn DensityPath, t: f64, n: usize) -> Result<ControlSolution> {
    let u = path.grid(t, n);
    let dtu = path.dt_grid(t, n);
    solve_control(&u, &dtu, CONTROL_TOLERANCE, CONTROL_MAX_ITER)
}

/// Potentials `H` of the optimal control at `slices` uniform times in
/// `[0, T]`, as an interpolating series.
pub fn control_series(path: &dyn DensityPath, n: usize, slices: usize) -> Result<FieldSeries> {
    let slices = slices.max(2);
    let horizon = path.horizon();
    let times: Vec<f64> = (0..slices)
        .map(|i| horizon * i as f64 / (slices - 1) as f64)
        .collect();
    let sols = crate::exec::try_map_replicas(crate::exec::ExecMode::default(), slices, |i| {
        optimal_control(path, times[i], n).map(|s| s.potential)
    })?;
    Ok(FieldSeries {
        times,
        slices: sols,
    })
}

/// Stepping options shared by the conservative solvers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Number of output intervals (snapshots are stored at `n_out + 1` times).
    pub n_out: usize,
    /// Upper bound on the time step.
    pub dt_max: f64,
    /// Fraction of the CFL step `dx / (2 speed)` actually used.
    pub cfl: f64,
    /// Abort when `sup u` exceeds this value.
    pub blowup_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            n_out: 64,
            dt_max: 1e-3,
            cfl: 1.0,
            blowup_cap: 1e8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub path: GridPath,
    pub steps: usize,
    pub clipped_nodes: usize,
}

enum FluxLaw {
    Linear,
    Theta(f64),
}

struct PreparedDrift {
    comps: Vec<Vec<f64>>,
    speed: f64,
}

fn flux(law: &FluxLaw, u: &[f64], drift: &PreparedDrift) -> Vec<Vec<f64>> {
    drift
        .comps
        .iter()
        .map(|c| {
            c.iter()
                .zip(u)
                .map(|(g, v)| match law {
                    FluxLaw::Linear => g * v,
                    FluxLaw::Theta(k) => g * moments::theta(v.max(0.0), *k),
                })
                .collect()
        })
        .collect()
}

fn split_solve<P>(
    u0: &GridField,
    horizon: f64,
    opts: &SolverOptions,
    law: FluxLaw,
    prepare: P,
) -> Result<SolveReport>
where
    P: Fn(f64, &[f64]) -> Result<PreparedDrift>,
{
    if u0.comps != 1 {
        return invalid("initial density must be scalar");
    }
    if u0.min() < 0.0 {
        return invalid("initial density must be nonnegative");
    }
    if !(horizon >= 0.0) {
        return invalid("horizon must be nonnegative");
    }
    let s = Spectral::new(u0.dim, u0.n);
    let dx = 1.0 / u0.n as f64;
    let n_out = opts.n_out.max(1);
    let mut u = u0.data.clone();
    let mut times = vec![0.0];
    let mut snaps = vec![u0.clone()];
    let mut t = 0.0;
    let mut steps = 0;
    let mut clipped = 0;
    for k in 1..=n_out {
        let t_out = horizon * k as f64 / n_out as f64;
        while t < t_out - 1e-14 * horizon.max(1.0) {
            let d0 = prepare(t, &u)?;
            let mut dt = opts.dt_max.min(t_out - t);
            if d0.speed > 0.0 {
                dt = dt.min(opts.cfl * dx / (2.0 * d0.speed));
            }
            let u1 = s.heat(&u, 0.5 * dt);
            let f0 = flux(&law, &u1, &d0);
            let div0 = s.divergence(&f0);
            let uh: Vec<f64> = u1
                .iter()
                .zip(&div0)
                .map(|(a, b)| a - 0.5 * dt * b)
                .collect();
            let d1 = prepare(t + 0.5 * dt, &uh)?;
            let f1 = flux(&law, &uh, &d1);
            let div1 = s.divergence(&f1);
            let u2: Vec<f64> = u1.iter().zip(&div1).map(|(a, b)| a - dt * b).collect();
            u = s.heat(&u2, 0.5 * dt);
            t = if t_out - (t + dt) < 1e-14 * horizon.max(1.0) {
                t_out
            } else {
                t + dt
            };
            steps += 1;
            let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
            if !hi.is_finite() || hi > opts.blowup_cap {
                return Err(KmpError::Numerical(format!(
                    "density blew up at t = {t:.6}"
                )));
            }
            if lo < 0.0 {
                if -lo <= 1e-8 * hi {
                    for v in u.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                            clipped += 1;
                        }
                    }
                    log::debug!("clipped small negative densities at t = {t:.6}");
                } else {
                    return Err(KmpError::Numerical(format!(
                        "negative density {lo:e} at t = {t:.6}; grid too coarse"
                    )));
                }
            }
        }
        times.push(t_out);
        snaps.push(GridField {
            dim: u0.dim,
            n: u0.n,
            comps: 1,
            kind: FieldKind::Density,
            data: u.clone(),
        });
    }
    Ok(SolveReport {
        path: GridPath::new(times, snaps)?,
        steps,
        clipped_nodes: clipped,
    })
}

/// Solve the skeleton equation `du = (1/2) Delta u - div(u g)` by Strang
/// splitting.
pub fn skeleton_solve(
    u0: &GridField,
    g: &dyn VectorField,
    horizon: f64,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if g.dim() != u0.dim {
        return Err(KmpError::DimensionMismatch {
            expected: u0.dim,
            got: g.dim(),
        });
    }
    split_solve(u0, horizon, opts, FluxLaw::Linear, |t, _| {
        let gf = g.grid(t, u0.n);
        Ok(PreparedDrift {
            speed: gf.max_norm(),
            comps: gf.components(),
        })
    })
}

/// Solve the truncated Fokker–Planck equation
/// `dv = (1/2) Delta v - div(chi Theta_K(v) grad H)`.
pub fn tfp_solve(
    v0: &GridField,
    potential: &dyn ScalarField,
    chi: &dyn ScalarField,
    cutoff: f64,
    horizon: f64,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let s = Spectral::new(v0.dim, v0.n);
    split_solve(v0, horizon, opts, FluxLaw::Theta(cutoff), |t, v| {
        let h = potential.grid(t, v0.n);
        let c = chi.grid(t, v0.n);
        let grad = s.gradient(&h.data);
        let comps: Vec<Vec<f64>> = grad
            .into_iter()
            .map(|gc| gc.iter().zip(&c.data).map(|(a, b)| a * b).collect())
            .collect();
        let vmax = v.iter().cloned().fold(0.0, f64::max);
        let lip = theta_lipschitz(cutoff, 2.0 * vmax.max(1e-12));
        let field = GridField::from_components(v0.dim, v0.n, FieldKind::Velocity, comps);
        Ok(PreparedDrift {
            speed: field.max_norm() * lip,
            comps: field.components(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cos_field(n: usize) -> GridField {
        GridField::from_fn(1, n, FieldKind::Density, |x| {
            1.0 + 0.5 * (2.0 * PI * x[0]).cos()
        })
    }

    #[test]
    fn heat_step_examples() {
        let c = GridField::from_fn(2, 8, FieldKind::Density, |_| 3.0);
        let h = heat_step(&c, 0.7).unwrap();
        assert!(h.data.iter().all(|v| (v - 3.0).abs() < 1e-14));
        let f = GridField::from_fn(1, 32, FieldKind::Density, |x| (2.0 * PI * x[0]).cos());
        let t = 0.013;
        let g = heat_step(&f, t).unwrap();
        for i in 0..32 {
            let x = i as f64 / 32.0;
            assert!((g.data[i] - (-2.0 * PI * PI * t).exp() * (2.0 * PI * x).cos()).abs() < 1e-13);
        }
        let a = heat_step(&heat_step(&cos_field(64), 0.01).unwrap(), 0.02).unwrap();
        let b = heat_step(&cos_field(64), 0.03).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(heat_step(&f, -1.0).is_err());
    }

    #[test]
    fn manufactured_control_is_recovered() {
        let n = 128;
        let u = GridField::from_fn(1, n, FieldKind::Density, |x| 2.0 + (2.0 * PI * x[0]).cos());
        // dtu = (1/2) Delta u - div(u^2 grad H*)  with H* = sin(2 pi x)
        let dtu = GridField::from_fn(1, n, FieldKind::Density, |x| {
            let c = (2.0 * PI * x[0]).cos();
            let s = (2.0 * PI * x[0]).sin();
            let uu = 2.0 + c;
            let du = -2.0 * PI * s;
            let hx = 2.0 * PI * c;
            let hxx = -4.0 * PI * PI * s;
            let div = 2.0 * uu * du * hx + uu * uu * hxx;
            let lap = -4.0 * PI * PI * c;
            0.5 * lap - div
        });
        let sol = solve_control(&u, &dtu, CONTROL_TOLERANCE, CONTROL_MAX_ITER).unwrap();
        for i in 0..n {
            let x = i as f64 / n as f64;
            let expect = (2.0 * PI * x).sin();
            assert!((sol.potential.data[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_and_heat_paths_need_no_control() {
        let u = GridField::from_fn(2, 16, FieldKind::Density, |_| 1.5);
        let z = GridField::zeros(2, 16, 1, FieldKind::Density);
        let sol = solve_control(&u, &z, CONTROL_TOLERANCE, CONTROL_MAX_ITER).unwrap();
        assert!(sol.control.max_abs() == 0.0);
        let heat = AnalyticPath::new(1, 0.1, (0.5, 1.5), |t, x| {
            1.0 + 0.5 * (-2.0 * PI * PI * t).exp() * (2.0 * PI * x[0]).cos()
        });
        let sol = optimal_control(&heat, 0.05, 64).unwrap();
        assert!(sol.control.max_abs() < 1e-8);
    }

    #[test]
    fn skeleton_without_drift_is_heat_flow() {
        let u0 = cos_field(64);
        let g = FnVectorField {
            dim: 1,
            f: |_t: f64, _x: &[f64]| [0.0; 3],
        };
        let rep = skeleton_solve(&u0, &g, 0.05, &SolverOptions::default()).unwrap();
        let exact = heat_step(&u0, 0.05).unwrap();
        for (a, b) in rep.path.last().data.iter().zip(&exact.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn skeleton_conserves_mass_under_drift() {
        let u0 = cos_field(128);
        let g = FnVectorField {
            dim: 1,
            f: |t: f64, x: &[f64]| [(2.0 * PI * x[0]).sin() * (1.0 + t), 0.0, 0.0],
        };
        let rep = skeleton_solve(&u0, &g, 0.1, &SolverOptions::default()).unwrap();
        for s in &rep.path.snapshots {
            assert!((s.mean() - 1.0).abs() < 1e-10 * 0.1 + 1e-13);
        }
    }

    #[test]
    fn tfp_without_potential_is_heat_flow() {
        let v0 = cos_field(64);
        let h = FnScalarField {
            dim: 1,
            f: |_t: f64, _x: &[f64]| 0.0,
        };
        let chi = FnScalarField {
            dim: 1,
            f: |_t: f64, _x: &[f64]| 1.0,
        };
        let rep = tfp_solve(&v0, &h, &chi, 4.0, 0.05, &SolverOptions::default()).unwrap();
        let exact = heat_step(&v0, 0.05).unwrap();
        for (a, b) in rep.path.last().data.iter().zip(&exact.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
