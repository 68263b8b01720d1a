//! The acceptance suite: twelve checks with pinned sizes, seeds and
//! tolerances. Every check returns a [`CriterionResult`]; nothing panics on a
//! failed comparison.

use crate::cost::{dissipation_sweep, dynamic_cost, sigma_exponents, static_cost, time_integral};
use crate::engine::{
    empirical_measure, sample_equilibrium, simulate, EnergyConfig, Equilibrium, SimOptions,
};
use crate::error::{invalid, Result};
use crate::exec::{map_replicas, try_map_replicas, ExecMode};
use crate::fields::{
    control_series, optimal_control, tfp_solve, tv_distance, AnalyticPath, ChiField, DensityPath,
    FieldKind, GridField, MeasureState, SmoothPath, SolverOptions,
};
use crate::lattice::{GreenKernel, Lattice};
use crate::metric::flat_metric;
use crate::moments;
use crate::observables::{
    psi_k, psi_k_quadrature, replacement_statistic, upsilon_k, upsilon_k_quadrature, LocalFunction,
};
use crate::paths::{
    build_jump_2d, build_relaxed_3d, build_singular_1d, spike_asymptotic, spike_bound,
    track_energy, weak_skeleton_residual, Bump, BumpField, JumpSpec2D, Mollifier, Relaxed3DSpec,
    Route, Track,
};
use crate::rng::{replica_rng, replica_seed, seeded};
use crate::stats::{mean, median, std_error};
use crate::tilt::{lyapunov_drift_check, path_ledger, tilted_simulate, TiltSpec, WeightLedger};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

/// Outcome of one criterion.
#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub tolerance: String,
    pub metrics: Vec<(String, f64)>,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {} ({:.1}s) [{}] {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.tolerance,
            self.detail
        )
    }
}

/// Criteria that fail for reasons recorded with the project notes.
pub const KNOWN_UNATTAINABLE: &[u8] = &[7];

pub const CRITERIA: [(u8, &str); 12] = [
    (1, "closed-form identities"),
    (2, "green kernel"),
    (3, "conservation"),
    (4, "hydrodynamic trend"),
    (5, "tilted convergence"),
    (6, "entropy estimate"),
    (7, "dissipation sweep"),
    (8, "pathological d=1"),
    (9, "pathological d=2"),
    (10, "pathological d=3"),
    (11, "replacement weak law"),
    (12, "lyapunov drift"),
];

pub const SUITES: [&str; 4] = ["identities", "oracles", "trends", "full"];

pub fn suite_members(name: &str) -> Result<Vec<u8>> {
    match name {
        "identities" => Ok(vec![1, 2]),
        "oracles" => Ok(vec![3, 7, 8, 9, 12]),
        "trends" => Ok(vec![4, 5, 6, 10, 11]),
        "full" => Ok((1..=12).collect()),
        other => invalid(format!(
            "unknown suite '{other}', expected one of {SUITES:?}"
        )),
    }
}

pub fn criterion_name(id: u8) -> &'static str {
    CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, n)| *n)
        .unwrap_or("unknown")
}

pub fn run_criterion(id: u8, mode: ExecMode) -> Result<CriterionResult> {
    let start = Instant::now();
    let mut out = match id {
        1 => closed_forms(mode)?,
        2 => green_kernel()?,
        3 => conservation(mode)?,
        4 => hydrodynamic(mode)?,
        5 => tilted_convergence(mode)?,
        6 => entropy_estimate(mode)?,
        7 => dissipation()?,
        8 => pathological_1d()?,
        9 => pathological_2d()?,
        10 => pathological_3d()?,
        11 => replacement(mode)?,
        12 => lyapunov(mode)?,
        _ => return invalid(format!("no criterion {id}")),
    };
    out.id = id;
    out.name = criterion_name(id).to_string();
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

pub fn run_suite(name: &str, mode: ExecMode) -> Result<Vec<CriterionResult>> {
    suite_members(name)?
        .into_iter()
        .map(|id| run_criterion(id, mode))
        .collect()
}

fn result(
    passed: bool,
    tolerance: &str,
    metrics: Vec<(String, f64)>,
    detail: String,
) -> CriterionResult {
    CriterionResult {
        id: 0,
        name: String::new(),
        passed,
        tolerance: tolerance.into(),
        metrics,
        detail,
        seconds: 0.0,
    }
}

fn metric(name: impl Into<String>, v: f64) -> (String, f64) {
    (name.into(), v)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// `u(t, x) = 1 + a e^{-2 pi^2 t} cos(2 pi x_1) + b t sin(2 pi x_1)` on `[0, T]`:
/// the heat flow of a cosine profile with a slowly growing sine bump.
pub fn regular_path(a: f64, b: f64, horizon: f64) -> AnalyticPath {
    let k = 2.0 * PI;
    let lo = 1.0 - a - b.abs() * horizon;
    let hi = 1.0 + a + b.abs() * horizon;
    AnalyticPath::new(1, horizon, (lo, hi), move |t, x| {
        1.0 + a * (-0.5 * k * k * t).exp() * (k * x[0]).cos() + b * t * (k * x[0]).sin()
    })
    .with_time_derivative(move |t, x| {
        -0.5 * k * k * a * (-0.5 * k * k * t).exp() * (k * x[0]).cos() + b * (k * x[0]).sin()
    })
}

// ---------------------------------------------------------------- 1

const MC_SAMPLES: usize = 1_000_000;
const MC_SIGMAS: f64 = 4.0;
const QUAD_TOL: f64 = 1e-12;

fn within(samples: &[f64], exact: f64) -> (bool, f64) {
    let z = (mean(samples) - exact) / std_error(samples);
    (z.abs() <= MC_SIGMAS, z)
}

fn closed_forms(mode: ExecMode) -> Result<CriterionResult> {
    let cases: Vec<(f64, f64)> = [0.5, 1.0, 2.0]
        .iter()
        .flat_map(|&r| [1.0, 4.0, 16.0].into_iter().map(move |k| (r, k)))
        .collect();
    let rows = map_replicas(mode, cases.len(), |i| {
        let (rho, k) = cases[i];
        let mut rng = replica_rng(101, i as u64);
        let mut t1 = Vec::with_capacity(MC_SAMPLES);
        let mut t11 = Vec::with_capacity(MC_SAMPLES);
        let mut t2 = Vec::with_capacity(MC_SAMPLES);
        let mut ps = Vec::with_capacity(MC_SAMPLES);
        let mut us = Vec::with_capacity(MC_SAMPLES);
        for _ in 0..MC_SAMPLES {
            let x: f64 = rho * <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
            let c = x.min(k);
            t1.push(c);
            t11.push(x * c);
            t2.push(c * c);
            let a: f64 = rho * <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
            let b: f64 = rho * <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
            ps.push(psi_k(a, b, k));
            us.push(upsilon_k(a, b, k));
        }
        let checks = [
            within(&t1, moments::m1(rho, k)),
            within(&t11, moments::m11(rho, k)),
            within(&t2, moments::m2(rho, k)),
            within(&ps, -moments::theta(rho, k)),
            within(&us, moments::gamma(rho, k)),
        ];
        (rho, k, checks)
    });
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for (_, _, checks) in &rows {
        for (pass, z) in checks {
            ok &= pass;
            worst_z = worst_z.max(z.abs());
        }
    }
    let grid: Vec<f64> = (0..10).map(|i| 0.05 + 0.6 * i as f64).collect();
    let ks = [0.5, 1.0, 2.0, 3.0, 4.5, 6.0, 8.0, 12.0, 16.0, 32.0];
    let mut worst_quad: f64 = 0.0;
    for &a in &grid {
        for &b in &grid {
            for &k in &ks {
                let p = psi_k(a, b, k);
                let u = upsilon_k(a, b, k);
                worst_quad =
                    worst_quad.max((p - psi_k_quadrature(a, b, k)).abs() / p.abs().max(1.0));
                worst_quad =
                    worst_quad.max((u - upsilon_k_quadrature(a, b, k)).abs() / u.abs().max(1.0));
            }
        }
    }
    ok &= worst_quad <= QUAD_TOL;
    Ok(result(
        ok,
        "MC within 4 SE (1e6 samples); closed forms vs quadrature 1e-12",
        vec![
            metric("worst_z", worst_z),
            metric("worst_quadrature_gap", worst_quad),
        ],
        format!("worst |z| = {worst_z:.2}, quadrature gap = {worst_quad:.1e} on 1000 points"),
    ))
}

// ---------------------------------------------------------------- 2

const GREEN_TOL: f64 = 1e-10;

/// Gaussian elimination with partial pivoting on a small dense system.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn green_kernel() -> Result<CriterionResult> {
    let mut rng = seeded(202);
    let mut mass_gap: f64 = 0.0;
    let mut min_form = f64::INFINITY;
    for (d, n) in [(1, 16), (2, 8), (3, 4)] {
        let kernel = GreenKernel::new(Lattice::new(d, n)?);
        mass_gap = mass_gap.max((kernel.mass() - 1.0).abs());
        for _ in 0..200 {
            let f: Vec<f64> = (0..kernel.lattice().num_sites())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let norm = kernel.lattice().inner(&f, &f);
            min_form = min_form.min(kernel.quadratic_form(&f) / norm);
        }
    }
    let lat = Lattice::new(1, 3)?;
    let kernel = GreenKernel::new(lat);
    let mut a = vec![vec![0.0; 3]; 3];
    for j in 0..3 {
        let mut e = vec![0.0; 3];
        e[j] = 1.0;
        let lap = lat.laplacian(&e)?;
        for i in 0..3 {
            a[i][j] = -lap[i] + e[i];
        }
    }
    let g = dense_solve(a, vec![3.0, 0.0, 0.0]);
    let dense_gap = g
        .iter()
        .zip(kernel.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let ok = mass_gap <= GREEN_TOL && min_form > 0.0 && dense_gap <= GREEN_TOL;
    Ok(result(
        ok,
        "mass 1 to 1e-10; <f,Gf> > 0; dense N=3 solve to 1e-10",
        vec![metric("mass_gap", mass_gap), metric("min_rayleigh", min_form), metric("dense_gap", dense_gap)],
        format!("mass gap {mass_gap:.1e}, min Rayleigh quotient {min_form:.3e}, dense gap {dense_gap:.1e}"),
    ))
}

// ---------------------------------------------------------------- 3

const DRIFT_TOL: f64 = 1e-12;
const Z_RUNS: usize = 1000;

fn conservation(mode: ExecMode) -> Result<CriterionResult> {
    let lat = Lattice::new(1, 16)?;
    let horizon = 0.1;
    let path: SmoothPath = Arc::new(regular_path(0.2, 0.3, horizon));
    let series = control_series(path.as_ref(), 64, 17)?;
    let spec = TiltSpec::new(
        lat,
        path.clone(),
        &series,
        16.0,
        1.0,
        f64::INFINITY,
        0.0,
        17,
    )?;
    let opts = SimOptions::new(horizon).with_snapshots(10).with_flux(true);
    let rows = try_map_replicas(mode, Z_RUNS, |r| {
        let seed = replica_seed(303, r as u64);
        let mut rng = seeded(seed);
        let init = sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut rng)?;
        let traj = simulate(&init, &opts, &mut rng, seed)?;
        let ledger = path_ledger(
            &spec,
            &init.energies,
            traj.flux.as_deref().unwrap_or(&[]),
            horizon,
        )?;
        let z = (ledger.log_y0.unwrap_or(f64::NEG_INFINITY) + ledger.log_z()).exp();
        let tilted_drift = if r < 50 {
            let q0 = sample_equilibrium(
                &lat,
                &Equilibrium::profile(|x| 1.0 + 0.2 * (2.0 * PI * x[0]).cos()),
                &mut rng,
            )?;
            let (tr, _) = tilted_simulate(&spec, &q0, &opts, &mut rng, seed, false)?;
            tr.max_energy_drift()
        } else {
            0.0
        };
        Ok((traj.max_energy_drift(), tilted_drift, z))
    })?;
    let drift = rows.iter().map(|r| r.0.max(r.1)).fold(0.0, f64::max);
    let z: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (zm, se) = (mean(&z), std_error(&z));
    let ok = drift <= DRIFT_TOL && (zm - 1.0).abs() <= MC_SIGMAS * se;
    Ok(result(
        ok,
        "relative energy drift <= 1e-12; |E Z_T - 1| <= 4 SE over 1000 runs",
        vec![
            metric("max_drift", drift),
            metric("mean_z", zm),
            metric("se_z", se),
        ],
        format!("max drift {drift:.1e}, E Z = {zm:.4} +- {se:.4}"),
    ))
}

// ---------------------------------------------------------------- 4

const TREND_SIZES: [usize; 3] = [16, 32, 64];
const TREND_REPLICAS: usize = 50;
const METRIC_K: usize = 64;
const REF_GRID: usize = 512;

fn hydrodynamic(mode: ExecMode) -> Result<CriterionResult> {
    let horizon = 0.05;
    let decay = (-2.0 * PI * PI * horizon).exp();
    let target =
        MeasureState::from_density(GridField::from_fn(1, REF_GRID, FieldKind::Density, |x| {
            1.0 + 0.5 * decay * (2.0 * PI * x[0]).cos()
        }));
    let eq = Equilibrium::profile(|x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
    let mut medians = Vec::new();
    for &n in &TREND_SIZES {
        let lat = Lattice::new(1, n)?;
        let opts = SimOptions::new(horizon);
        let w = try_map_replicas(mode, TREND_REPLICAS, |r| {
            let seed = replica_seed(404 + n as u64, r as u64);
            let mut rng = seeded(seed);
            let init = sample_equilibrium(&lat, &eq, &mut rng)?;
            let traj = simulate(&init, &opts, &mut rng, seed)?;
            flat_metric(
                &empirical_measure(&lat, traj.final_config().unwrap_or(&init.energies)),
                &target,
                METRIC_K,
            )
        })?;
        medians.push(median(&w));
    }
    Ok(trend_result(
        medians,
        "median W~ strictly decreasing over N = 16, 32, 64",
    ))
}

fn trend_result(medians: Vec<f64>, tol: &str) -> CriterionResult {
    let ok = strictly_decreasing(&medians);
    let metrics = TREND_SIZES
        .iter()
        .zip(&medians)
        .map(|(n, m)| metric(format!("median_N{n}"), *m))
        .collect();
    let detail = TREND_SIZES
        .iter()
        .zip(&medians)
        .map(|(n, m)| format!("N={n}: {m:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    result(ok, tol, metrics, detail)
}

// ---------------------------------------------------------------- 5

const CUTOFF: f64 = 16.0;

fn tilted_convergence(mode: ExecMode) -> Result<CriterionResult> {
    let horizon = 0.05;
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, horizon));
    let series = control_series(path.as_ref(), 128, 33)?;
    let v0 = path.grid(0.0, REF_GRID);
    let chi = ChiField {
        path: path.clone(),
        cutoff: CUTOFF,
    };
    let report = tfp_solve(
        &v0,
        &series,
        &chi,
        CUTOFF,
        horizon,
        &SolverOptions::default(),
    )?;
    let target = MeasureState::from_density(report.path.last().clone());
    let p0 = path.clone();
    let eq = Equilibrium::profile(move |x| p0.value(0.0, x));
    let mut medians = Vec::new();
    for &n in &TREND_SIZES {
        let lat = Lattice::new(1, n)?;
        let spec = TiltSpec::new(
            lat,
            path.clone(),
            &series,
            CUTOFF,
            1.0,
            f64::INFINITY,
            0.0,
            33,
        )?;
        let opts = SimOptions::new(horizon);
        let w = try_map_replicas(mode, TREND_REPLICAS, |r| {
            let seed = replica_seed(505 + n as u64, r as u64);
            let mut rng = seeded(seed);
            let init = sample_equilibrium(&lat, &eq, &mut rng)?;
            let (traj, _) = tilted_simulate(&spec, &init, &opts, &mut rng, seed, false)?;
            flat_metric(
                &empirical_measure(&lat, traj.final_config().unwrap_or(&init.energies)),
                &target,
                METRIC_K,
            )
        })?;
        medians.push(median(&w));
    }
    Ok(trend_result(
        medians,
        "median W~ to the tfp solution strictly decreasing over N = 16, 32, 64",
    ))
}

// ---------------------------------------------------------------- 6

const ENTROPY_REL_TOL: f64 = 0.15;
const ENTROPY_REPLICAS: usize = 160;

/// `S_rho(u_0) + (1/2) int int R_K(u) |g|^2` for the optimal control `g = u grad H`.
pub fn entropy_reference(
    path: &dyn DensityPath,
    rho: f64,
    cutoff: f64,
    n: usize,
) -> Result<(f64, f64)> {
    let s0 = static_cost(&MeasureState::from_density(path.grid(0.0, n)), rho)?;
    let dynamic = time_integral(path.horizon(), &path.singular_times(), 1e-6, |t| {
        let sol = optimal_control(path, t, n)?;
        let u = path.grid(t, n);
        let nodes = u.nodes();
        let mut acc = 0.0;
        for i in 0..nodes {
            let g2: f64 = (0..sol.control.comps)
                .map(|c| sol.control.component(c)[i].powi(2))
                .sum();
            acc += moments::r_k(u.data[i], cutoff) * g2;
        }
        Ok(0.5 * acc / nodes as f64)
    })?;
    Ok((s0, dynamic.value))
}

fn entropy_estimate(mode: ExecMode) -> Result<CriterionResult> {
    let horizon = 0.25;
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.6, horizon));
    let (s0, dynamic) = entropy_reference(path.as_ref(), 1.0, CUTOFF, 256)?;
    let reference = s0 + dynamic;
    let series = control_series(path.as_ref(), 128, 65)?;
    let p0 = path.clone();
    let eq = Equilibrium::profile(move |x| p0.value(0.0, x));
    let mut bounds = Vec::new();
    let mut point = Vec::new();
    let mut consistent = true;
    let mut metrics = vec![
        metric("reference", reference),
        metric("static", s0),
        metric("dynamic", dynamic),
    ];
    for n in [32usize, 64] {
        let lat = Lattice::new(1, n)?;
        let spec = TiltSpec::new(
            lat,
            path.clone(),
            &series,
            CUTOFF,
            1.0,
            f64::INFINITY,
            0.0,
            65,
        )?;
        let opts = SimOptions::new(horizon);
        let samples = try_map_replicas(mode, ENTROPY_REPLICAS, |r| {
            let seed = replica_seed(606 + n as u64, r as u64);
            let mut rng = seeded(seed);
            let init = sample_equilibrium(&lat, &eq, &mut rng)?;
            let (_, ledger) = tilted_simulate(&spec, &init, &opts, &mut rng, seed, true)?;
            Ok(ledger)
        })?;
        let est = EntropyEstimate::new(&spec, &samples);
        metrics.push(metric(format!("entropy_N{n}"), est.value));
        metrics.push(metric(format!("se_N{n}"), est.se));
        metrics.push(metric(format!("raw_N{n}"), est.raw));
        metrics.push(metric(format!("raw_se_N{n}"), est.raw_se));
        consistent &= est.raw_agrees();
        point.push(est.relative_gap(reference));
        bounds.push(est.gap_bound(reference));
    }
    let ok = point[1] <= ENTROPY_REL_TOL && bounds[1] < bounds[0] && consistent;
    Ok(result(
        ok,
        "relative gap <= 0.15 at N=64, gap bound (|gap| + 2 SE) shrinking from N=32, raw ledger mean within 4 SE",
        metrics,
        format!(
            "reference {reference:.4}, relative gaps N=32: {:.4}, N=64: {:.4}, bounds {:.4} -> {:.4}",
            point[0], point[1], bounds[0], bounds[1]
        ),
    ))
}

/// Entropy per volume from a batch of weight ledgers.
///
/// `log Y_0` has an exact mean under the product initial law, so it serves as
/// a control variate: the estimate is that mean plus the averaged path
/// integrand. Its expectation is the plain ledger mean, with most of the
/// initial-sampling noise removed. The plain mean is kept for cross-checking.
/// Under a conditioned initial law the plain mean is used.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub se: f64,
    pub raw: f64,
    pub raw_se: f64,
    /// Standard error of `raw - value`.
    pub diff_se: f64,
}

impl EntropyEstimate {
    pub fn new(spec: &TiltSpec, ledgers: &[WeightLedger]) -> Self {
        let volume = spec.lattice.num_sites() as f64;
        let raw: Vec<f64> = ledgers
            .iter()
            .map(|l| l.entropy().unwrap_or(f64::INFINITY) / volume)
            .collect();
        let Some(exact) = spec.expected_log_y0() else {
            return EntropyEstimate {
                value: mean(&raw),
                se: std_error(&raw),
                raw: mean(&raw),
                raw_se: std_error(&raw),
                diff_se: 0.0,
            };
        };
        let controlled: Vec<f64> = ledgers
            .iter()
            .map(|l| (exact + l.entropy_integrand) / volume)
            .collect();
        let diff: Vec<f64> = raw.iter().zip(&controlled).map(|(a, b)| a - b).collect();
        EntropyEstimate {
            value: mean(&controlled),
            se: std_error(&controlled),
            raw: mean(&raw),
            raw_se: std_error(&raw),
            diff_se: std_error(&diff),
        }
    }

    pub fn relative_gap(&self, reference: f64) -> f64 {
        (self.value - reference).abs() / reference
    }

    /// Upper two-standard-error bound on the relative gap.
    pub fn gap_bound(&self, reference: f64) -> f64 {
        ((self.value - reference).abs() + 2.0 * self.se) / reference
    }

    /// The plain ledger mean lies within four standard errors of the estimate.
    pub fn raw_agrees(&self) -> bool {
        (self.raw - self.value).abs() <= 4.0 * self.diff_se
    }
}

// ---------------------------------------------------------------- 7

const SLOPE_TOL: f64 = 0.1;

pub fn default_theta(dim: usize) -> f64 {
    if dim >= 3 {
        0.75
    } else {
        0.5
    }
}

fn dissipation() -> Result<CriterionResult> {
    let eps: Vec<f64> = (0..4).map(|i| 10f64.powi(-i)).collect();
    let sigma: Vec<f64> = (2..=6).map(|i| 2f64.powi(-i)).collect();
    let mut ok = true;
    let mut metrics = Vec::new();
    let mut detail = Vec::new();
    for dim in 1..=3 {
        let theta = default_theta(dim);
        let rows = dissipation_sweep(dim, theta, &eps, &sigma)?;
        let bound_ok = rows.iter().all(|r| r.value <= r.bound);
        let target = dim as f64 * theta - 2.0;
        let slopes = sigma_exponents(&rows);
        let worst = slopes
            .iter()
            .map(|(_, s)| (s - target).abs())
            .fold(0.0, f64::max);
        ok &= bound_ok && worst <= SLOPE_TOL;
        metrics.push(metric(format!("d{dim}_worst_slope_gap"), worst));
        metrics.push(metric(format!("d{dim}_bound_ok"), bound_ok as u8 as f64));
        detail.push(format!(
            "d={dim}: bound {}, slopes {:?} vs {target:.2}",
            if bound_ok { "ok" } else { "violated" },
            slopes
                .iter()
                .map(|(_, s)| (s * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        ));
    }
    Ok(result(
        ok,
        "value <= bound everywhere; sigma-exponent within 0.1 of d theta - 2",
        metrics,
        detail.join("; "),
    ))
}

// ---------------------------------------------------------------- 8

const J_VARIATION: f64 = 0.25;

fn pathological_1d() -> Result<CriterionResult> {
    let mut js = Vec::new();
    let mut metrics = Vec::new();
    for n in [4usize, 8, 16, 32] {
        let c = build_singular_1d(n, 0.5, 0.5, 0.45, 1.0)?;
        let grid = (128 * n).max(1024);
        let j = dynamic_cost(c.path.as_ref(), grid, &c.path.breakpoints())?;
        metrics.push(metric(format!("J_n{n}"), j.value));
        js.push(j.value);
    }
    let variation = (js[3] - js[2]).abs() / js[2];
    let c = build_singular_1d(4, 0.5, 0.5, 0.45, 1.0)?;
    let at = c.limit.field.measure(0.5, 256);
    let atoms = MeasureState {
        dim: 1,
        density: None,
        atoms: at.atoms.clone(),
    };
    let tv = tv_distance(&atoms, &MeasureState::zero(1))?;
    let smooth_before = c.limit.field.measure(0.25, 256).atoms.is_empty();
    metrics.push(metric("variation", variation));
    metrics.push(metric("atom_tv", tv));
    let ok =
        js.iter().all(|j| j.is_finite()) && variation < J_VARIATION && tv == 1.0 && smooth_before;
    Ok(result(
        ok,
        "J finite; |J32 - J16|/J16 < 0.25; limit atom TV == 1",
        metrics,
        format!(
            "J = {:?}, variation {variation:.3}, atom TV {tv}",
            js.iter()
                .map(|j| (j * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        ),
    ))
}

// ---------------------------------------------------------------- 9

const ENVELOPE_MARGIN: f64 = 1.25;
const RESIDUAL_TOL: f64 = 1e-5;
const TRACK_TOL: f64 = 1e-6;

/// Largest ratio of the weighted spike cost to [`spike_bound`] over the
/// calibration set.
pub fn envelope_constant(mol: &Mollifier, theta: f64) -> f64 {
    let mut c: f64 = 0.0;
    for eps in [0.1, 0.01] {
        for tau in [1.0 / 8.0, 1.0 / 16.0] {
            for lambda in [1.0 / 16.0, 1.0 / 64.0] {
                let route = Route::geodesic([0.3, 0.3, 0.0], [0.6, 0.5, 0.0], 2);
                let bump = Bump {
                    weight: eps,
                    track: Track::Spike {
                        t0: 0.7,
                        tau,
                        lambda,
                        sigma0: 0.45,
                        route,
                    },
                };
                let w = track_energy(mol, &bump, 1.0, 1.0, 1, TRACK_TOL);
                c = c.max(w / spike_bound(eps, tau, lambda, theta));
            }
        }
    }
    c
}

/// Four jumps of halving size at distinct times; the first `n` are kept.
pub fn jump_list(n: usize, m: f64) -> JumpSpec2D {
    JumpSpec2D {
        eps: (0..4).map(|k| 0.2 * 0.5f64.powi(k)).collect(),
        times: vec![0.55, 0.65, 0.75, 0.85],
        a: vec![[0.2, 0.2], [0.7, 0.25], [0.25, 0.7], [0.7, 0.7]],
        b: vec![[0.35, 0.3], [0.8, 0.4], [0.4, 0.8], [0.85, 0.85]],
        gamma: 0.5,
        n,
        m,
        sigma0: 0.45,
        horizon: 1.0,
    }
}

/// Smallest `m >= 8` with `m^{-theta} sum_k eps_k^{(1-theta)/2} < 1/n`.
pub fn m_for(spec: &JumpSpec2D) -> f64 {
    let th = spec.theta();
    let s: f64 = spec.eps[..spec.n]
        .iter()
        .map(|e| e.powf((1.0 - th) / 2.0))
        .sum();
    ((spec.n as f64 * s).powf(1.0 / th).floor() + 1.0).max(8.0)
}

fn pathological_2d() -> Result<CriterionResult> {
    let mol = Mollifier::new(2)?;
    let theta = 0.5;
    let c_fit = envelope_constant(&mol, theta);
    let mut metrics = vec![metric("c_fit", c_fit)];
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_tv: f64 = 0.0;
    let mut js = Vec::new();
    for n in [1usize, 2, 4] {
        let m0 = m_for(&jump_list(n, 1.0));
        for m in [m0, 4.0 * m0] {
            let spec = jump_list(n, m);
            let c = build_jump_2d(&spec)?;
            for ((_, tv), e) in c.limit.tv_jump_table().iter().zip(&spec.eps) {
                worst_tv = worst_tv.max((tv - 2.0 * e).abs());
            }
            let bg = c.path.background;
            let weighted: f64 = c
                .path
                .bumps
                .iter()
                .map(|b| track_energy(&mol, b, bg, 1.0, 1, TRACK_TOL))
                .sum();
            let j: f64 = c
                .path
                .bumps
                .iter()
                .map(|b| 0.5 * track_energy(&mol, b, bg, 1.0, 2, TRACK_TOL))
                .sum();
            let envelope: f64 = spec.eps[..n]
                .iter()
                .map(|&e| spike_asymptotic(e, m, theta))
                .sum();
            let ratio = weighted / (c_fit * envelope);
            worst_ratio = worst_ratio.max(ratio);
            js.push(j);
            metrics.push(metric(format!("ratio_n{n}_m{m}"), ratio));
            metrics.push(metric(format!("J_n{n}_m{m}"), j));
        }
    }
    ok &= worst_tv == 0.0 && worst_ratio <= ENVELOPE_MARGIN && js.iter().all(|j| j.is_finite());
    let spec = JumpSpec2D {
        eps: vec![0.2, 0.1],
        times: vec![0.5, 0.8],
        a: vec![[0.25, 0.25], [0.7, 0.3]],
        b: vec![[0.5, 0.6], [0.75, 0.8]],
        gamma: 0.5,
        n: 2,
        m: 4.0,
        sigma0: 0.45,
        horizon: 1.0,
    };
    let c = build_jump_2d(&spec)?;
    let modes = [
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [1, -1, 0],
        [2, 0, 0],
        [0, 2, 0],
        [2, 1, 0],
        [1, 2, 0],
    ];
    let residual = weak_skeleton_residual(&c.path, 256, &modes, 4);
    ok &= residual <= RESIDUAL_TOL;
    metrics.push(metric("worst_tv_gap", worst_tv));
    metrics.push(metric("worst_envelope_ratio", worst_ratio));
    metrics.push(metric("weak_residual", residual));
    Ok(result(
        ok,
        "TV == 2 eps exactly; cost <= 1.25 C_fit envelope; weak residual <= 1e-5",
        metrics,
        format!("C_fit {c_fit:.2}, worst envelope ratio {worst_ratio:.3}, TV gap {worst_tv}, residual {residual:.2e}"),
    ))
}

// ---------------------------------------------------------------- 10

/// Background 0.5 plus two drifting bumps of weight 0.5 in the unit cube.
pub fn two_bump_target() -> Result<BumpField> {
    let bumps = vec![
        Bump {
            weight: 0.5,
            track: Track::Drift {
                start: [0.25, 0.25, 0.25],
                velocity: [0.2, 0.0, 0.0],
                radius: 0.4,
                dim: 3,
            },
        },
        Bump {
            weight: 0.5,
            track: Track::Drift {
                start: [0.75, 0.7, 0.6],
                velocity: [0.0, -0.15, 0.0],
                radius: 0.4,
                dim: 3,
            },
        },
    ];
    BumpField::new(3, 1.0, 0.5, bumps)
}

fn pathological_3d() -> Result<CriterionResult> {
    let target = two_bump_target()?;
    let mut spec = Relaxed3DSpec::new(target.clone(), 0.5, 2.0);
    spec.seed = 3;
    let mut costs = Vec::new();
    let mut dists = Vec::new();
    let mut metrics = Vec::new();
    for n in [2usize, 4, 8] {
        let c = build_relaxed_3d(&spec, n)?;
        let cost = c.cost();
        let w = c.distance_to(&target, 4, 4, 256);
        metrics.push(metric(format!("lower_n{n}"), cost.lower));
        metrics.push(metric(format!("upper_n{n}"), cost.upper));
        metrics.push(metric(format!("distance_n{n}"), w));
        costs.push(cost);
        dists.push(w);
    }
    let ok = costs[2].upper * 10.0 <= costs[0].lower && strictly_decreasing(&dists);
    Ok(result(
        ok,
        "upper J(n=8) <= lower J(n=2)/10; W~ strictly decreasing",
        metrics,
        format!(
            "J(2) >= {:.2}, J(8) <= {:.3}, W~ = {:?}",
            costs[0].lower,
            costs[2].upper,
            dists
                .iter()
                .map(|d| (d * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        ),
    ))
}

// ---------------------------------------------------------------- 11

const COMPARISONS: usize = 50;
const INNER_REPLICAS: usize = 9;
const REQUIRED_WINS: usize = 45;

fn replacement_median(
    n: usize,
    comparison: usize,
    tilt: Option<&TiltSpec>,
    f: &LocalFunction,
    eq: &Equilibrium,
) -> Result<f64> {
    let horizon = 0.05;
    let lat = Lattice::new(1, n)?;
    let opts = SimOptions::new(horizon).with_snapshots(32);
    let phi = |_: f64, x: &[f64]| (2.0 * PI * x[0]).cos();
    let mut vals = Vec::with_capacity(INNER_REPLICAS);
    for r in 0..INNER_REPLICAS {
        let seed = replica_seed(1100 + comparison as u64, (r * 1000 + n) as u64);
        let mut rng = seeded(seed);
        let init: EnergyConfig = sample_equilibrium(&lat, eq, &mut rng)?;
        let traj = match tilt {
            Some(spec) => tilted_simulate(spec, &init, &opts, &mut rng, seed, false)?.0,
            None => simulate(&init, &opts, &mut rng, seed)?,
        };
        vals.push(replacement_statistic(&traj, f, &phi, 0.1)?.value.abs());
    }
    Ok(median(&vals))
}

fn replacement(mode: ExecMode) -> Result<CriterionResult> {
    let bounded = LocalFunction::capped_energy(1.0);
    let product = LocalFunction::tilted_product(CUTOFF);
    let uniform = Equilibrium::Uniform { rho: 1.0 };
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, 0.05));
    let series = control_series(path.as_ref(), 128, 17)?;
    let specs = [16usize, 64]
        .iter()
        .map(|&n| {
            TiltSpec::new(
                Lattice::new(1, n)?,
                path.clone(),
                &series,
                CUTOFF,
                1.0,
                f64::INFINITY,
                0.0,
                17,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let p0 = path.clone();
    let profile = Equilibrium::profile(move |x| p0.value(0.0, x));
    let wins = |tilted: bool| -> Result<usize> {
        let rows = try_map_replicas(mode, COMPARISONS, |c| {
            let (small, large) = if tilted {
                (
                    replacement_median(16, c, Some(&specs[0]), &product, &profile)?,
                    replacement_median(64, c, Some(&specs[1]), &product, &profile)?,
                )
            } else {
                (
                    replacement_median(16, c, None, &bounded, &uniform)?,
                    replacement_median(64, c, None, &bounded, &uniform)?,
                )
            };
            Ok(large < small)
        })?;
        Ok(rows.into_iter().filter(|w| *w).count())
    };
    let plain = wins(false)?;
    let tilted = wins(true)?;
    let ok = plain >= REQUIRED_WINS && tilted >= REQUIRED_WINS;
    Ok(result(
        ok,
        ">= 45 of 50 paired comparisons favour N=64, for both statistics",
        vec![
            metric("wins_bounded", plain as f64),
            metric("wins_tilted_product", tilted as f64),
        ],
        format!("min(xi,1) under P: {plain}/50, xi(0)(xi(e1)^K) under Q: {tilted}/50"),
    ))
}

// ---------------------------------------------------------------- 12

const LYAPUNOV_SAMPLES: usize = 1000;

fn lyapunov(mode: ExecMode) -> Result<CriterionResult> {
    let lat = Lattice::new(1, 16)?;
    let kernel = GreenKernel::new(lat);
    let samples = try_map_replicas(mode, LYAPUNOV_SAMPLES, |i| {
        let mut rng = replica_rng(1200, i as u64);
        let rho: f64 = rng.gen_range(0.2..3.0);
        let amp: f64 = rng.gen_range(0.0..0.9);
        let phase: f64 = rng.gen_range(0.0..1.0);
        let eq =
            Equilibrium::profile(move |x| rho * (1.0 + amp * (2.0 * PI * (x[0] + phase)).cos()));
        Ok(sample_equilibrium(&lat, &eq, &mut rng)?.energies)
    })?;
    let plain = lyapunov_drift_check(&kernel, &samples, None)?;
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, 0.05));
    let series = control_series(path.as_ref(), 128, 17)?;
    let spec = TiltSpec::new(lat, path, &series, CUTOFF, 1.0, f64::INFINITY, 0.0, 17)?;
    let tilted = lyapunov_drift_check(&kernel, &samples, Some((&spec, 0.025)))?;
    let ok = plain.violations == 0 && plain.feasible && tilted.violations == 0 && tilted.feasible;
    Ok(result(
        ok,
        "zero violations of L F <= C F - c |xi|^2 on 1000 samples with fitted c > 0",
        vec![
            metric("violations", plain.violations as f64),
            metric("c", plain.fitted_c),
            metric("C", plain.fitted_big_c),
            metric("tilted_violations", tilted.violations as f64),
            metric("tilted_c", tilted.fitted_c),
            metric("tilted_C", tilted.fitted_big_c),
        ],
        format!(
            "untilted: {} violations, c = {:.3}, C = {:.3}; tilted: {} violations, c = {:.3}, C = {:.3}",
            plain.violations, plain.fitted_c, plain.fitted_big_c, tilted.violations, tilted.fitted_c, tilted.fitted_big_c
        ),
    ))
}
