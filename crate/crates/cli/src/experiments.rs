//! The experiments behind `kmplab run`. Each one writes its artifacts into
//! the output directory and returns metrics plus named pass/fail checks.

use crate::config::{EquilibriumKind, Experiment, RunConfig, Target3d};
use kmplab::acceptance::{
    default_theta, entropy_reference, envelope_constant, jump_list, m_for, regular_path,
    two_bump_target, EntropyEstimate,
};
use kmplab::cost::{dissipation_sweep, dynamic_cost, sigma_exponents};
use kmplab::engine::{
    empirical_measure, sample_equilibrium, simulate, Equilibrium, SimOptions, Trajectory,
};
use kmplab::exec::{try_map_replicas, ExecMode};
use kmplab::fields::{
    control_series, tfp_solve, tv_distance, ChiField, FieldKind, GridField, MeasureState,
    SmoothPath, SolverOptions,
};
use kmplab::lattice::{GreenKernel, Lattice};
use kmplab::metric::flat_metric;
use kmplab::observables::{replacement_statistic, LocalFunction};
use kmplab::paths::{
    build_jump_2d, build_relaxed_3d, build_singular_1d, spike_asymptotic, track_energy,
    weak_skeleton_residual, BumpField, JumpSpec2D, Mollifier, Relaxed3DSpec,
};
use kmplab::persist::{write_fields, write_trajectory};
use kmplab::rng::{replica_rng, replica_seed, seeded};
use kmplab::stats::median;
use kmplab::tilt::{lyapunov_drift_check, tilted_simulate, TiltSpec};
use kmplab::{KmpError, Result};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

const TRACK_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub metrics: Vec<(String, f64)>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    /// Structured records copied into the summary.
    pub records: BTreeMap<String, serde_json::Value>,
}

impl Outcome {
    fn metric(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.push((name.into(), v));
    }

    fn record<T: Serialize>(&mut self, name: &str, v: &T) {
        let v = serde_json::to_value(v).expect("records serialize");
        self.records.insert(name.into(), v);
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub dir: PathBuf,
    pub run_id: String,
    pub mode: ExecMode,
}

impl Context<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write `rows` as CSV; every row already carries the run id and seed.
    fn csv<T: Serialize>(&self, out: &mut Outcome, name: &str, rows: &[T]) -> Result<()> {
        kmplab::persist::records_csv(BufWriter::new(File::create(self.path(name))?), rows)?;
        out.files.push(name.into());
        Ok(())
    }

    fn trajectory(&self, out: &mut Outcome, stem: &str, traj: &Trajectory) -> Result<()> {
        let name = format!("{stem}.kmp");
        write_trajectory(&mut BufWriter::new(File::create(self.path(&name))?), traj)?;
        out.files.push(name);
        let rows: Vec<SiteRow> = traj
            .times
            .iter()
            .zip(&traj.snapshots)
            .flat_map(|(&t, s)| {
                s.iter().enumerate().map(move |(i, &e)| SiteRow {
                    run: self.run_id.clone(),
                    seed: traj.seed,
                    t,
                    site_index: i,
                    energy: e,
                })
            })
            .collect();
        self.csv(out, &format!("{stem}.csv"), &rows)
    }
}

#[derive(Serialize)]
struct SiteRow {
    run: String,
    seed: u64,
    t: f64,
    site_index: usize,
    energy: f64,
}

pub fn run(ctx: &Context) -> Result<Outcome> {
    let mut out = Outcome::default();
    match ctx.cfg.experiment {
        Experiment::EquilibriumSim => equilibrium_sim(ctx, &mut out)?,
        Experiment::TiltedSim => tilted_sim(ctx, &mut out)?,
        Experiment::HydroCheck => hydro_check(ctx, &mut out)?,
        Experiment::EntropyCheck => entropy_check(ctx, &mut out)?,
        Experiment::ReplacementSweep => replacement_sweep(ctx, &mut out)?,
        Experiment::Pathological1d => pathological_1d(ctx, &mut out)?,
        Experiment::Pathological2d => pathological_2d(ctx, &mut out)?,
        Experiment::Pathological3d => pathological_3d(ctx, &mut out)?,
        Experiment::DissipationSweep => dissipation(ctx, &mut out)?,
        Experiment::LyapunovCheck => lyapunov(ctx, &mut out)?,
    }
    Ok(out)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn equilibrium(cfg: &RunConfig) -> Equilibrium {
    let e = &cfg.equilibrium;
    let (rho, amp) = (e.rho, e.amplitude);
    let u = move |x: &[f64]| rho * (1.0 + amp * (2.0 * PI * x[0]).cos());
    match e.kind {
        EquilibriumKind::Uniform => Equilibrium::Uniform { rho },
        EquilibriumKind::Profile => Equilibrium::profile(u),
        EquilibriumKind::Conditioned => Equilibrium::conditioned(u, e.cap),
    }
}

fn sim_options(cfg: &RunConfig) -> SimOptions {
    let mut o = SimOptions::new(cfg.horizon).with_snapshots(cfg.snapshots);
    o.event_budget = cfg.event_budget;
    o
}

// ------------------------------------------------------------ simulation

#[derive(Serialize)]
struct ReplicaRow {
    run: String,
    seed: u64,
    replica: usize,
    replica_seed: u64,
    events: u64,
    initial_mass: f64,
    final_mass: f64,
    max_drift: f64,
}

fn equilibrium_sim(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let lat = Lattice::new(cfg.lattice.dim, cfg.lattice.side)?;
    let eq = equilibrium(cfg);
    let opts = sim_options(cfg);
    let runs = try_map_replicas(ctx.mode, cfg.replicas, |r| {
        let seed = replica_seed(cfg.seed, r as u64);
        let mut rng = seeded(seed);
        let init = sample_equilibrium(&lat, &eq, &mut rng)?;
        let traj = simulate(&init, &opts, &mut rng, seed)?;
        Ok((init.mass(), traj))
    })?;
    let rows: Vec<ReplicaRow> = runs
        .iter()
        .enumerate()
        .map(|(r, (m0, traj))| ReplicaRow {
            run: ctx.run_id.clone(),
            seed: cfg.seed,
            replica: r,
            replica_seed: traj.seed,
            events: traj.events,
            initial_mass: *m0,
            final_mass: traj
                .final_config()
                .map(|c| lat.site_weight() * c.iter().sum::<f64>())
                .unwrap_or(*m0),
            max_drift: traj.max_energy_drift(),
        })
        .collect();
    ctx.csv(out, "replicas.csv", &rows)?;
    ctx.trajectory(out, "trajectory_0", &runs[0].1)?;
    let drift = rows.iter().map(|r| r.max_drift).fold(0.0, f64::max);
    let events: u64 = rows.iter().map(|r| r.events).sum();
    out.metric("max_energy_drift", drift);
    out.metric("mean_events", events as f64 / rows.len() as f64);
    out.check(
        "energy conservation",
        drift <= cfg.tolerances.energy_drift,
        format!(
            "max relative drift {drift:.2e} over {} replicas",
            rows.len()
        ),
    );
    Ok(())
}

fn tilt_setup(cfg: &RunConfig, lat: Lattice) -> Result<(SmoothPath, TiltSpec)> {
    let t = &cfg.tilt;
    let path: SmoothPath = Arc::new(regular_path(t.a, t.b, cfg.horizon));
    let series = control_series(path.as_ref(), t.control_grid, t.slices)?;
    let cap = if t.mass_cap > 0.0 {
        t.mass_cap
    } else {
        f64::INFINITY
    };
    let spec = TiltSpec::new(
        lat,
        path.clone(),
        &series,
        t.cutoff,
        t.rho,
        cap,
        0.0,
        t.slices,
    )?;
    Ok((path, spec))
}

fn initial_law(cfg: &RunConfig, path: &SmoothPath) -> Equilibrium {
    let p0 = path.clone();
    let u0 = move |x: &[f64]| p0.value(0.0, x);
    if cfg.tilt.mass_cap > 0.0 {
        Equilibrium::conditioned(u0, cfg.tilt.mass_cap)
    } else {
        Equilibrium::profile(u0)
    }
}

#[derive(Serialize)]
struct LedgerRow {
    run: String,
    seed: u64,
    replica: usize,
    #[serde(rename = "log_Y0")]
    log_y0: Option<f64>,
    #[serde(rename = "log_Z_jump")]
    log_z_jump: f64,
    #[serde(rename = "log_Z_comp")]
    log_z_comp: f64,
    entropy_integrand: f64,
    accepted_jumps: u64,
    proposals: u64,
    max_drift: f64,
    distance_to_tfp: f64,
}

fn tilted_sim(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let lat = Lattice::new(1, cfg.lattice.side)?;
    let (path, spec) = tilt_setup(cfg, lat)?;
    let series = control_series(path.as_ref(), cfg.tilt.control_grid, cfg.tilt.slices)?;
    let chi = ChiField {
        path: path.clone(),
        cutoff: cfg.tilt.cutoff,
    };
    let opts = SolverOptions {
        n_out: cfg.snapshots,
        ..SolverOptions::default()
    };
    let report = tfp_solve(
        &path.grid(0.0, cfg.grids.reference),
        &series,
        &chi,
        cfg.tilt.cutoff,
        cfg.horizon,
        &opts,
    )?;
    let name = "tfp.kmp";
    write_fields(
        &mut BufWriter::new(File::create(ctx.path(name))?),
        &report.path.times,
        &report.path.snapshots,
        cfg.horizon,
        cfg.seed,
    )?;
    out.files.push(name.into());
    let target = MeasureState::from_density(report.path.last().clone());
    let eq = initial_law(cfg, &path);
    let sopts = sim_options(cfg);
    let runs = try_map_replicas(ctx.mode, cfg.replicas, |r| {
        let seed = replica_seed(cfg.seed, r as u64);
        let mut rng = seeded(seed);
        let init = sample_equilibrium(&lat, &eq, &mut rng)?;
        let (traj, ledger) = tilted_simulate(&spec, &init, &sopts, &mut rng, seed, true)?;
        let last = traj.final_config().unwrap_or(&init.energies);
        let w = flat_metric(
            &empirical_measure(&lat, last),
            &target,
            cfg.grids.metric_k_max,
        )?;
        Ok((traj, ledger, w))
    })?;
    let rows: Vec<LedgerRow> = runs
        .iter()
        .enumerate()
        .map(|(r, (traj, l, w))| LedgerRow {
            run: ctx.run_id.clone(),
            seed: cfg.seed,
            replica: r,
            log_y0: l.log_y0,
            log_z_jump: l.log_z_jump,
            log_z_comp: l.log_z_comp,
            entropy_integrand: l.entropy_integrand,
            accepted_jumps: l.accepted_jumps,
            proposals: l.proposals,
            max_drift: traj.max_energy_drift(),
            distance_to_tfp: *w,
        })
        .collect();
    ctx.csv(out, "ledger.csv", &rows)?;
    let ledgers: Vec<_> = runs.iter().map(|(_, l, _)| l).collect();
    out.record("weight_ledgers", &ledgers);
    ctx.trajectory(out, "trajectory_0", &runs[0].0)?;
    let drift = rows.iter().map(|r| r.max_drift).fold(0.0, f64::max);
    let dist: Vec<f64> = rows.iter().map(|r| r.distance_to_tfp).collect();
    let finite = rows
        .iter()
        .all(|r| r.log_z_jump.is_finite() && r.log_z_comp.is_finite());
    out.metric("max_energy_drift", drift);
    out.metric("median_distance_to_tfp", median(&dist));
    out.metric("tfp_steps", report.steps as f64);
    out.check(
        "energy conservation",
        drift <= cfg.tolerances.energy_drift,
        format!("max relative drift {drift:.2e}"),
    );
    out.check("finite weights", finite, format!("{} ledgers", rows.len()));
    Ok(())
}

// ------------------------------------------------------------ trends

#[derive(Serialize)]
struct TrendRow {
    run: String,
    seed: u64,
    n: usize,
    replica: usize,
    value: f64,
}

fn trend_rows(ctx: &Context, n: usize, values: &[f64]) -> Vec<TrendRow> {
    values
        .iter()
        .enumerate()
        .map(|(r, &v)| TrendRow {
            run: ctx.run_id.clone(),
            seed: ctx.cfg.seed,
            n,
            replica: r,
            value: v,
        })
        .collect()
}

fn hydro_check(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let (rho, amp, horizon) = (cfg.equilibrium.rho, cfg.equilibrium.amplitude, cfg.horizon);
    let decay = (-2.0 * PI * PI * horizon).exp();
    let target = MeasureState::from_density(GridField::from_fn(
        1,
        cfg.grids.reference,
        FieldKind::Density,
        |x| rho * (1.0 + amp * decay * (2.0 * PI * x[0]).cos()),
    ));
    let eq = Equilibrium::profile(move |x| rho * (1.0 + amp * (2.0 * PI * x[0]).cos()));
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for &n in &cfg.sweep.sizes {
        let lat = Lattice::new(1, n)?;
        let opts = sim_options(cfg);
        let w = try_map_replicas(ctx.mode, cfg.replicas, |r| {
            let seed = replica_seed(cfg.seed + n as u64, r as u64);
            let mut rng = seeded(seed);
            let init = sample_equilibrium(&lat, &eq, &mut rng)?;
            let traj = simulate(&init, &opts, &mut rng, seed)?;
            let last = traj.final_config().unwrap_or(&init.energies);
            flat_metric(
                &empirical_measure(&lat, last),
                &target,
                cfg.grids.metric_k_max,
            )
        })?;
        medians.push(median(&w));
        out.metric(format!("median_N{n}"), median(&w));
        rows.extend(trend_rows(ctx, n, &w));
    }
    ctx.csv(out, "distances.csv", &rows)?;
    out.check(
        "median distance decreasing",
        strictly_decreasing(&medians),
        format!("medians {}", fmt_list(&medians)),
    );
    Ok(())
}

fn entropy_check(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let lat0 = Lattice::new(1, cfg.sweep.sizes[0])?;
    let (path, _) = tilt_setup(cfg, lat0)?;
    let (s0, dynamic) = entropy_reference(
        path.as_ref(),
        cfg.tilt.rho,
        cfg.tilt.cutoff,
        cfg.grids.reference,
    )?;
    let reference = s0 + dynamic;
    out.metric("reference", reference);
    let eq = initial_law(cfg, &path);
    let mut gaps = Vec::new();
    let mut bounds = Vec::new();
    let mut consistent = true;
    let mut rows = Vec::new();
    for &n in &cfg.sweep.sizes {
        let lat = Lattice::new(1, n)?;
        let (_, spec) = tilt_setup(cfg, lat)?;
        let opts = sim_options(cfg);
        let ledgers = try_map_replicas(ctx.mode, cfg.replicas, |r| {
            let seed = replica_seed(cfg.seed + n as u64, r as u64);
            let mut rng = seeded(seed);
            let init = sample_equilibrium(&lat, &eq, &mut rng)?;
            let (_, ledger) = tilted_simulate(&spec, &init, &opts, &mut rng, seed, true)?;
            Ok(ledger)
        })?;
        let est = EntropyEstimate::new(&spec, &ledgers);
        out.metric(format!("entropy_N{n}"), est.value);
        out.metric(format!("se_N{n}"), est.se);
        out.metric(format!("raw_N{n}"), est.raw);
        out.metric(format!("raw_se_N{n}"), est.raw_se);
        consistent &= est.raw_agrees();
        gaps.push(est.relative_gap(reference));
        bounds.push(est.gap_bound(reference));
        let per_replica: Vec<f64> = ledgers
            .iter()
            .map(|l| l.entropy().unwrap_or(f64::INFINITY) / n as f64)
            .collect();
        rows.extend(trend_rows(ctx, n, &per_replica));
    }
    ctx.csv(out, "entropy.csv", &rows)?;
    let last = *gaps.last().unwrap_or(&f64::INFINITY);
    out.check(
        "entropy gap within tolerance",
        last <= cfg.tolerances.entropy_relative,
        format!(
            "reference {reference:.4}, relative gaps {}",
            fmt_list(&gaps)
        ),
    );
    out.check(
        "entropy gap bound shrinking",
        strictly_decreasing(&bounds),
        format!("gap + 2 SE {}", fmt_list(&bounds)),
    );
    out.check(
        "raw ledger mean consistent",
        consistent,
        "plain mean within 4 SE of the estimate".to_string(),
    );
    Ok(())
}

#[derive(Serialize)]
struct ReplacementRow {
    run: String,
    seed: u64,
    n: usize,
    eps: f64,
    replica: usize,
    statistic: f64,
}

fn replacement_sweep(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let f = LocalFunction::capped_energy(1.0);
    let eq = equilibrium(cfg);
    let phi = |_: f64, x: &[f64]| (2.0 * PI * x[0]).cos();
    let mut rows = Vec::new();
    for &eps in &cfg.sweep.eps {
        let mut medians = Vec::new();
        for &n in &cfg.sweep.sizes {
            let lat = Lattice::new(1, n)?;
            let opts = sim_options(cfg);
            let v = try_map_replicas(ctx.mode, cfg.replicas, |r| {
                let seed = replica_seed(cfg.seed + n as u64, r as u64);
                let mut rng = seeded(seed);
                let init = sample_equilibrium(&lat, &eq, &mut rng)?;
                let traj = simulate(&init, &opts, &mut rng, seed)?;
                Ok(replacement_statistic(&traj, &f, &phi, eps)?.value.abs())
            })?;
            medians.push(median(&v));
            out.metric(format!("median_eps{eps}_N{n}"), median(&v));
            rows.extend(v.iter().enumerate().map(|(r, &s)| ReplacementRow {
                run: ctx.run_id.clone(),
                seed: cfg.seed,
                n,
                eps,
                replica: r,
                statistic: s,
            }));
        }
        out.check(
            &format!("median statistic decreasing (eps = {eps})"),
            strictly_decreasing(&medians),
            format!("medians {}", fmt_list(&medians)),
        );
    }
    ctx.csv(out, "replacement.csv", &rows)?;
    Ok(())
}

// ------------------------------------------------------------ constructions

#[derive(Serialize)]
struct CostRow {
    run: String,
    seed: u64,
    n: usize,
    grid: usize,
    cost: f64,
}

fn pathological_1d(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let p = &cfg.pathological;
    let mut js = Vec::new();
    let mut rows = Vec::new();
    for &n in &p.n_values {
        let c = build_singular_1d(n, p.t0, p.x0, p.sigma0, p.horizon)?;
        let grid = (cfg.grids.cost_per_n * n).max(cfg.grids.cost_min);
        let j = dynamic_cost(c.path.as_ref(), grid, &c.path.breakpoints())?.value;
        out.metric(format!("J_n{n}"), j);
        js.push(j);
        rows.push(CostRow {
            run: ctx.run_id.clone(),
            seed: cfg.seed,
            n,
            grid,
            cost: j,
        });
    }
    ctx.csv(out, "costs.csv", &rows)?;
    out.record("cost_report", &rows);
    out.check(
        "costs finite",
        js.iter().all(|j| j.is_finite()),
        format!("J = {}", fmt_list(&js)),
    );
    if js.len() >= 2 {
        let (a, b) = (js[js.len() - 2], js[js.len() - 1]);
        let variation = (b - a).abs() / a;
        out.metric("variation", variation);
        out.check(
            "cost stabilises",
            variation < cfg.tolerances.j_variation,
            format!("relative change of the last two costs {variation:.3}"),
        );
    }
    let c = build_singular_1d(p.n_values[0], p.t0, p.x0, p.sigma0, p.horizon)?;
    let at = c.limit.field.measure(p.t0, 256);
    let atoms = MeasureState {
        dim: 1,
        density: None,
        atoms: at.atoms,
    };
    let tv = tv_distance(&atoms, &MeasureState::zero(1))?;
    out.metric("atom_tv", tv);
    out.check(
        "limit has a unit atom",
        tv == 1.0,
        format!("atomic total variation at t0 is {tv}"),
    );
    Ok(())
}

#[derive(Serialize)]
struct JumpRow {
    run: String,
    seed: u64,
    n: usize,
    m: f64,
    weighted_cost: f64,
    cost: f64,
    envelope: f64,
    ratio: f64,
}

fn pathological_2d(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let mol = Mollifier::new(2)?;
    let theta = 0.5;
    let c_fit = envelope_constant(&mol, theta);
    out.metric("c_fit", c_fit);
    let mut rows = Vec::new();
    let mut worst_tv: f64 = 0.0;
    for &n in &cfg.pathological.jump_counts {
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
            rows.push(JumpRow {
                run: ctx.run_id.clone(),
                seed: cfg.seed,
                n,
                m,
                weighted_cost: weighted,
                cost: j,
                envelope,
                ratio: weighted / (c_fit * envelope),
            });
        }
    }
    ctx.csv(out, "jumps.csv", &rows)?;
    out.record("cost_report", &rows);
    let worst = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    out.metric("worst_envelope_ratio", worst);
    out.metric("worst_tv_gap", worst_tv);
    out.check(
        "jump sizes exact",
        worst_tv == 0.0,
        format!("largest |TV - 2 eps| = {worst_tv}"),
    );
    out.check(
        "cost within envelope",
        worst <= cfg.pathological.envelope_margin && rows.iter().all(|r| r.cost.is_finite()),
        format!(
            "worst ratio {worst:.3} against margin {}",
            cfg.pathological.envelope_margin
        ),
    );
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
    out.metric("weak_residual", residual);
    out.check(
        "weak skeleton residual",
        residual <= cfg.tolerances.weak_residual,
        format!("{residual:.2e} on 8 test modes"),
    );
    Ok(())
}

#[derive(Serialize)]
struct RelaxedRow {
    run: String,
    seed: u64,
    n: usize,
    lower: f64,
    upper: f64,
    static_rate: f64,
    transition: f64,
    distance: f64,
}

fn pathological_3d(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let p = &cfg.pathological;
    let target = match p.target {
        Target3d::TwoBump => two_bump_target()?,
        Target3d::Uniform => BumpField::new(3, 1.0, 1.0, Vec::new())?,
    };
    let mut spec = Relaxed3DSpec::new(target.clone(), p.floor, p.mass_cap);
    spec.seed = p.construction_seed;
    let mut rows = Vec::new();
    for &n in &p.relaxed_n {
        let c = build_relaxed_3d(&spec, n)?;
        let cost = c.cost();
        rows.push(RelaxedRow {
            run: ctx.run_id.clone(),
            seed: cfg.seed,
            n,
            lower: cost.lower,
            upper: cost.upper,
            static_rate: cost.static_rate,
            transition: cost.transition,
            distance: c.distance_to(&target, 4, 4, 256),
        });
        let name = format!("manifest_n{n}.json");
        serde_json::to_writer_pretty(BufWriter::new(File::create(ctx.path(&name))?), &c.manifest)
            .map_err(|e| KmpError::Format(e.to_string()))?;
        out.files.push(name);
    }
    ctx.csv(out, "relaxed.csv", &rows)?;
    out.record("cost_report", &rows);
    let uppers: Vec<f64> = rows.iter().map(|r| r.upper).collect();
    let lowers: Vec<f64> = rows.iter().map(|r| r.lower).collect();
    for r in &rows {
        out.metric(format!("upper_n{}", r.n), r.upper);
        out.metric(format!("distance_n{}", r.n), r.distance);
    }
    out.check(
        "cost table decreasing",
        strictly_decreasing(&uppers),
        format!("upper bounds {}", fmt_list(&uppers)),
    );
    if p.target == Target3d::TwoBump {
        let ratio = lowers[0] / uppers[uppers.len() - 1];
        out.metric("cost_ratio", ratio);
        out.check(
            "cost collapses",
            ratio >= cfg.tolerances.cost_ratio_3d,
            format!("first lower / last upper = {ratio:.2}"),
        );
        let d: Vec<f64> = rows.iter().map(|r| r.distance).collect();
        out.check(
            "distance decreasing",
            strictly_decreasing(&d),
            format!("distances {}", fmt_list(&d)),
        );
    }
    Ok(())
}

// ------------------------------------------------------------ scans

#[derive(Serialize)]
struct DissipationRow {
    run: String,
    seed: u64,
    dim: usize,
    eps: f64,
    sigma: f64,
    theta: f64,
    value: f64,
    bound: f64,
}

fn dissipation(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let mut rows = Vec::new();
    for &dim in &cfg.sweep.dims {
        let theta = default_theta(dim);
        let sweep = dissipation_sweep(dim, theta, &cfg.sweep.eps, &cfg.sweep.sigma)?;
        let bound_ok = sweep.iter().all(|r| r.value <= r.bound);
        out.check(
            &format!("d={dim} value below bound"),
            bound_ok,
            format!("{} points", sweep.len()),
        );
        if cfg.sweep.sigma.len() >= 2 {
            let target = dim as f64 * theta - 2.0;
            let slopes = sigma_exponents(&sweep);
            let worst = slopes
                .iter()
                .map(|(_, s)| (s - target).abs())
                .fold(0.0, f64::max);
            out.metric(format!("d{dim}_worst_slope_gap"), worst);
            let s: Vec<f64> = slopes.iter().map(|(_, s)| *s).collect();
            out.check(
                &format!("d={dim} sigma exponent"),
                worst <= cfg.tolerances.slope,
                format!("slopes {} against {target:.2}", fmt_list(&s)),
            );
        }
        rows.extend(sweep.into_iter().map(|r| DissipationRow {
            run: ctx.run_id.clone(),
            seed: cfg.seed,
            dim,
            eps: r.eps,
            sigma: r.sigma,
            theta: r.theta,
            value: r.value,
            bound: r.bound,
        }));
    }
    ctx.csv(out, "dissipation.csv", &rows)?;
    out.record("dissipation", &rows);
    Ok(())
}

#[derive(Serialize)]
struct LyapunovRow {
    run: String,
    seed: u64,
    tilted: bool,
    sample: usize,
    generator_value: f64,
    functional: f64,
    norm2: f64,
}

fn lyapunov(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = ctx.cfg;
    let lat = Lattice::new(cfg.lattice.dim, cfg.lattice.side)?;
    let kernel = GreenKernel::new(lat);
    let samples = try_map_replicas(ctx.mode, cfg.replicas, |i| {
        let mut rng = replica_rng(cfg.seed, i as u64);
        let rho: f64 = rng.gen_range(0.2..3.0);
        let amp: f64 = rng.gen_range(0.0..0.9);
        let phase: f64 = rng.gen_range(0.0..1.0);
        let eq =
            Equilibrium::profile(move |x| rho * (1.0 + amp * (2.0 * PI * (x[0] + phase)).cos()));
        Ok(sample_equilibrium(&lat, &eq, &mut rng)?.energies)
    })?;
    let mut reports = vec![(false, lyapunov_drift_check(&kernel, &samples, None)?)];
    if lat.dim() == 1 {
        let (_, spec) = tilt_setup(cfg, lat)?;
        reports.push((
            true,
            lyapunov_drift_check(&kernel, &samples, Some((&spec, 0.5 * cfg.horizon)))?,
        ));
    }
    let mut rows = Vec::new();
    for (tilted, rep) in &reports {
        let tag = if *tilted { "tilted" } else { "untilted" };
        out.metric(format!("{tag}_c"), rep.fitted_c);
        out.metric(format!("{tag}_C"), rep.fitted_big_c);
        out.metric(format!("{tag}_violations"), rep.violations as f64);
        out.check(
            &format!("{tag} drift inequality"),
            rep.violations == 0 && rep.feasible,
            format!(
                "{} violations, c = {:.3}, C = {:.3}",
                rep.violations, rep.fitted_c, rep.fitted_big_c
            ),
        );
        rows.extend(
            rep.rows
                .iter()
                .enumerate()
                .map(|(i, &(lf, f, n2))| LyapunovRow {
                    run: ctx.run_id.clone(),
                    seed: cfg.seed,
                    tilted: *tilted,
                    sample: i,
                    generator_value: lf,
                    functional: f,
                    norm2: n2,
                }),
        );
    }
    ctx.csv(out, "lyapunov.csv", &rows)?;
    Ok(())
}

pub fn output_dir(cfg: &RunConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone())
}
