use kmplab::acceptance::{regular_path, two_bump_target};
use kmplab::cost::{dynamic_cost, energy_balance};
use kmplab::fields::{
    control_series, skeleton_solve, tfp_solve, ChiField, DensityPath, FieldKind, FnVectorField,
    GridField, SmoothPath, SolverOptions,
};
use kmplab::paths::{
    build_jump_2d, build_relaxed_3d, build_singular_1d, JumpSpec2D, Relaxed3DSpec,
};
use kmplab::rng::seeded;
use kmplab::spectral::Spectral;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn jump_spec() -> JumpSpec2D {
    JumpSpec2D {
        eps: vec![0.2, 0.1],
        times: vec![0.5, 0.8],
        a: vec![[0.25, 0.25], [0.7, 0.3]],
        b: vec![[0.5, 0.6], [0.75, 0.8]],
        gamma: 0.5,
        n: 2,
        m: 4.0,
        sigma0: 0.45,
        horizon: 1.0,
    }
}

#[test]
fn solvers_conserve_mass() {
    let u0 = GridField::from_fn(2, 32, FieldKind::Density, |x| {
        1.0 + 0.4 * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin()
    });
    let g = FnVectorField {
        dim: 2,
        f: |t: f64, x: &[f64]| {
            [
                (2.0 * PI * x[1]).sin() * (1.0 + t),
                0.3 * (2.0 * PI * x[0]).cos(),
                0.0,
            ]
        },
    };
    let opts = SolverOptions {
        n_out: 8,
        ..SolverOptions::default()
    };
    let rep = skeleton_solve(&u0, &g, 0.2, &opts).unwrap();
    for s in &rep.path.snapshots {
        assert!((s.mean() - u0.mean()).abs() <= 1e-10 * 0.2);
    }
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, 0.05));
    let series = control_series(path.as_ref(), 64, 9).unwrap();
    let v0 = path.grid(0.0, 64);
    let chi = ChiField {
        path: path.clone(),
        cutoff: 4.0,
    };
    let rep = tfp_solve(&v0, &series, &chi, 4.0, 0.05, &opts).unwrap();
    for s in &rep.path.snapshots {
        assert!((s.mean() - v0.mean()).abs() <= 1e-10 * 0.05);
    }
}

#[test]
fn tfp_reproduces_its_target_path_with_refinement() {
    // spectral in space, so the gap is set by the splitting step
    let horizon = 0.05;
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, horizon));
    let series = control_series(path.as_ref(), 64, 33).unwrap();
    let gap = |dt_max: f64| {
        let chi = ChiField {
            path: path.clone(),
            cutoff: 16.0,
        };
        let opts = SolverOptions {
            dt_max,
            ..SolverOptions::default()
        };
        let rep = tfp_solve(&path.grid(0.0, 64), &series, &chi, 16.0, horizon, &opts).unwrap();
        let target = path.grid(horizon, 64);
        rep.path
            .last()
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (gap(4e-4), gap(2e-4));
    assert!(coarse / fine >= 3.5, "gaps {coarse:e} -> {fine:e}");
}

#[test]
fn tfp_step_partitions_agree_at_horizon() {
    let horizon = 0.05;
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, horizon));
    let series = control_series(path.as_ref(), 32, 33).unwrap();
    let end = |n_out: usize, dt_max: f64| {
        let chi = ChiField {
            path: path.clone(),
            cutoff: 16.0,
        };
        let opts = SolverOptions {
            n_out,
            dt_max,
            ..SolverOptions::default()
        };
        let rep = tfp_solve(&path.grid(0.0, 32), &series, &chi, 16.0, horizon, &opts).unwrap();
        rep.path.last().data.clone()
    };
    let a = end(5, 1e-4);
    let b = end(8, 7e-5);
    let gap = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-8, "gap {gap:e}");
}

#[test]
fn optimal_control_is_orthogonal_to_null_directions() {
    let path = regular_path(0.5, 1.0, 0.1);
    let n = 64;
    // a genuinely two dimensional density
    let u = GridField::from_fn(2, n, FieldKind::Density, |x| {
        path.value(0.03, &[x[0]]) + 0.2 * (2.0 * PI * x[1]).sin()
    });
    let dtu = GridField::from_fn(2, n, FieldKind::Density, |x| {
        path.time_derivative(0.03, &[x[0]]) + (2.0 * PI * (x[0] + x[1])).cos()
    });
    let sol = kmplab::fields::solve_control(&u, &dtu, 1e-12, 10_000).unwrap();
    let spec = Spectral::new(2, n);
    let mut rng = seeded(11);
    let g0 = sol.control.component(0);
    let g1 = sol.control.component(1);
    let gnorm = (sol.control.l2_squared()).sqrt();
    for _ in 0..16 {
        // h = u^{-1} curl(psi) has div(u h) = 0
        let (a, b, c) = (
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let (k1, k2) = (rng.gen_range(1..4) as f64, rng.gen_range(1..4) as f64);
        let psi = GridField::from_fn(2, n, FieldKind::Potential, |x| {
            a * (2.0 * PI * k1 * x[0]).sin() * (2.0 * PI * x[1]).cos()
                + b * (2.0 * PI * k2 * x[1]).sin()
                + c * (2.0 * PI * (x[0] - x[1])).cos()
        });
        let grad = spec.gradient(&psi.data);
        let h0: Vec<f64> = grad[1].iter().zip(&u.data).map(|(p, v)| p / v).collect();
        let h1: Vec<f64> = grad[0].iter().zip(&u.data).map(|(p, v)| -p / v).collect();
        let nodes = (n * n) as f64;
        let dot: f64 = (0..n * n)
            .map(|i| g0[i] * h0[i] + g1[i] * h1[i])
            .sum::<f64>()
            / nodes;
        let hnorm = ((0..n * n)
            .map(|i| h0[i] * h0[i] + h1[i] * h1[i])
            .sum::<f64>()
            / nodes)
            .sqrt();
        assert!(dot.abs() <= 1e-7 * gnorm * hnorm, "{dot:e}");
    }
}

#[test]
fn energy_estimate_holds_on_solved_paths() {
    let path = regular_path(0.5, 1.0, 0.1);
    let n = 128;
    let p2 = regular_path(0.5, 1.0, 0.1);
    // u g = (1 + 2 pi^2 t) cos(2 pi x) / (2 pi) solves the skeleton equation
    let g = FnVectorField {
        dim: 1,
        f: move |t: f64, x: &[f64]| {
            [
                (1.0 + 2.0 * PI * PI * t) * (2.0 * PI * x[0]).cos() / (2.0 * PI * p2.value(t, x)),
                0.0,
                0.0,
            ]
        },
    };
    let bal = energy_balance(&path, &g, n, 1.0, &[]).unwrap();
    assert!(bal.slack >= -1e-3, "{bal:?}");
    assert!(bal.identity_residual.abs() < 1e-3, "{bal:?}");

    let c = build_singular_1d(4, 0.5, 0.5, 0.45, 1.0).unwrap();
    let bal = energy_balance(
        c.path.as_ref(),
        &c.path.control(),
        1024,
        1.0,
        &c.path.breakpoints(),
    )
    .unwrap();
    assert!(bal.slack >= -1e-3, "{bal:?}");
}

#[test]
fn dynamic_cost_is_stable_under_extra_cuts() {
    let path = regular_path(0.5, 1.0, 0.1);
    let a = dynamic_cost(&path, 128, &[]).unwrap().value;
    let b = dynamic_cost(&path, 128, &[0.013, 0.05, 0.071])
        .unwrap()
        .value;
    assert!((a - b).abs() <= 1e-5 * a, "{a} vs {b}");
}

#[test]
fn constructions_respect_floor_and_mass() {
    let mut rng = seeded(21);
    let singular = build_singular_1d(8, 0.5, 0.5, 0.45, 1.0).unwrap();
    let jump = build_jump_2d(&jump_spec()).unwrap();
    let mut spec = Relaxed3DSpec::new(two_bump_target().unwrap(), 0.5, 2.0);
    spec.seed = 3;
    let relaxed = build_relaxed_3d(&spec, 2).unwrap();
    let cases: [(&dyn DensityPath, f64, f64); 3] = [
        (singular.path.as_ref(), 1.0, singular.path.mass()),
        (jump.path.as_ref(), 1.0, jump.path.mass()),
        (relaxed.path.as_ref(), 0.5, relaxed.path.mass()),
    ];
    for (path, floor, mass) in cases {
        let d = path.dim();
        for _ in 0..200 {
            let t: f64 = rng.gen_range(0.0..path.horizon());
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            assert!(path.value(t, &x) >= floor);
        }
        // the d = 3 bumps are far below any affordable grid spacing
        if d < 3 {
            let n = if d == 1 { 4096 } else { 256 };
            for t in [0.1, 0.45, 0.62, 0.9] {
                let m = path.grid(t, n).mean();
                assert!((m - mass).abs() < 1e-8, "d={d} t={t}: {m} vs {mass}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bump_field_zero_mode_is_the_mass(t in 0.0f64..1.0) {
        let jump = build_jump_2d(&jump_spec()).unwrap();
        let c = jump.path.fourier(t, &[[0, 0, 0]]);
        prop_assert!((c[0].re - jump.path.mass()).abs() < 1e-12);
    }
}
