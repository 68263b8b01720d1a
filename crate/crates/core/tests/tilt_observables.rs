use kmplab::acceptance::regular_path;
use kmplab::engine::{sample_equilibrium, simulate, EnergyConfig, Equilibrium, SimOptions};
use kmplab::fields::{control_series, Atom, DensityPath, FnScalarField, MeasureState, SmoothPath};
use kmplab::lattice::{GreenKernel, Lattice};
use kmplab::metric::flat_metric;
use kmplab::observables::{martingale_residual, LocalFunction};
use kmplab::rng::{replica_seed, seeded};
use kmplab::stats::{ks_two_sample, mean, std_error};
use kmplab::tilt::{lyapunov_drift_check, tilted_simulate, InitialWeight, TiltSpec};
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;

fn tilt(n: usize, horizon: f64) -> TiltSpec {
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, horizon));
    let series = control_series(path.as_ref(), 128, 17).unwrap();
    TiltSpec::new(
        Lattice::new(1, n).unwrap(),
        path,
        &series,
        16.0,
        1.0,
        f64::INFINITY,
        0.0,
        17,
    )
    .unwrap()
}

#[test]
fn zero_potential_tilt_has_the_untilted_law() {
    let lat = Lattice::new(1, 8).unwrap();
    let path: SmoothPath = Arc::new(regular_path(0.0, 0.0, 0.1));
    let zero = FnScalarField {
        dim: 1,
        f: |_: f64, _: &[f64]| 0.0,
    };
    let spec = TiltSpec::new(lat, path, &zero, 16.0, 1.0, f64::INFINITY, 0.0, 5).unwrap();
    let opts = SimOptions::new(0.1);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for r in 0..400u64 {
        let init = EnergyConfig::new(
            lat,
            (0..8).map(|i| if i == 0 { 8.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let (tr, ledger) = tilted_simulate(
            &spec,
            &init,
            &opts,
            &mut seeded(replica_seed(1, r)),
            r,
            true,
        )
        .unwrap();
        assert_eq!(ledger.log_z(), 0.0);
        a.push(tr.final_config().unwrap()[0]);
        let tr = simulate(&init, &opts, &mut seeded(replica_seed(2, r)), r).unwrap();
        b.push(tr.final_config().unwrap()[0]);
    }
    let (_, p) = ks_two_sample(&a, &b);
    assert!(p > 1e-3, "KS p-value {p}");
}

#[test]
fn entropy_density_of_a_jump_is_order_inverse_n_squared() {
    // max over samples of N^2 (r log r - r + 1) at r = e^vartheta stays bounded in N
    let mut scaled = Vec::new();
    for n in [16usize, 32, 64] {
        let spec = tilt(n, 0.05);
        let mut rng = seeded(5);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            let xi =
                sample_equilibrium(&spec.lattice, &Equilibrium::Uniform { rho: 1.5 }, &mut rng)
                    .unwrap()
                    .energies;
            let t = rng.gen_range(0.0..0.05);
            let e = rng.gen_range(0..spec.lattice.num_edges());
            let p: f64 = rng.gen_range(0.0..1.0);
            let v = spec.vartheta(t, e, p, &xi);
            worst = worst.max(v * v.exp() - v.exp() + 1.0);
            assert!(v.abs() <= spec.theta_bound() / n as f64 + 1e-12);
        }
        scaled.push(worst * (n * n) as f64);
    }
    let c = scaled[0];
    assert!(scaled.iter().all(|s| *s <= 2.0 * c), "{scaled:?}");
}

#[test]
fn initial_weight_excludes_heavy_configurations() {
    let path: SmoothPath = Arc::new(regular_path(0.5, 1.0, 0.05));
    let series = control_series(path.as_ref(), 64, 5).unwrap();
    let spec = TiltSpec::new(
        Lattice::new(1, 8).unwrap(),
        path,
        &series,
        16.0,
        1.0,
        2.0,
        0.0,
        5,
    )
    .unwrap();
    assert_eq!(spec.log_y0(&[3.0; 8]).unwrap(), InitialWeight::Excluded);
    assert!(matches!(
        spec.log_y0(&[1.0; 8]).unwrap(),
        InitialWeight::Finite(_)
    ));
}

#[test]
fn martingale_has_mean_zero() {
    let lat = Lattice::new(1, 16).unwrap();
    let phi: Vec<f64> = (0..16)
        .map(|s| (2.0 * std::f64::consts::PI * lat.position(s)[0]).sin())
        .collect();
    let opts = SimOptions::new(0.05).with_flux(true).with_snapshots(8);
    let terminal: Vec<f64> = (0..100u64)
        .map(|r| {
            let mut rng = seeded(replica_seed(77, r));
            let init =
                sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut rng).unwrap();
            let tr = simulate(&init, &opts, &mut rng, r).unwrap();
            martingale_residual(&tr, &init.energies, &phi, None)
                .unwrap()
                .terminal()
        })
        .collect();
    assert!(mean(&terminal).abs() <= 4.0 * std_error(&terminal));
}

#[test]
fn capped_energy_replacement_mean_matches_truncated_moment() {
    let f = LocalFunction::capped_energy(2.0);
    assert!((f.mean(1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
}

fn atom_measure() -> impl Strategy<Value = MeasureState> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..2.0), 1..5).prop_map(|v| MeasureState {
        dim: 1,
        density: None,
        atoms: v
            .into_iter()
            .map(|(x, w)| Atom {
                pos: [x, 0.0, 0.0],
                weight: w,
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_metric_triangle_inequality(a in atom_measure(), b in atom_measure(), c in atom_measure()) {
        let ab = flat_metric(&a, &b, 16).unwrap();
        let bc = flat_metric(&b, &c, 16).unwrap();
        let ac = flat_metric(&a, &c, 16).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(flat_metric(&a, &a, 16).unwrap() == 0.0);
    }
}

#[test]
fn untilted_drift_satisfies_the_analytic_constants() {
    // L F <= F - |xi|^2 / 3 holds for the Green functional without fitting
    for (d, n) in [(1, 16), (2, 6)] {
        let lat = Lattice::new(d, n).unwrap();
        let kernel = GreenKernel::new(lat);
        let mut rng = seeded(77);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let rho: f64 = rng.gen_range(0.1..4.0);
                let amp: f64 = rng.gen_range(0.0..0.95);
                let eq = Equilibrium::profile(move |x| rho * (1.0 + amp * (6.0 * x[0]).sin()));
                sample_equilibrium(&lat, &eq, &mut rng).unwrap().energies
            })
            .collect();
        let rep = lyapunov_drift_check(&kernel, &samples, None).unwrap();
        assert_eq!(rep.count_violations(1.0 / 3.0, 1.0), 0, "d = {d}");
        assert!(rep.count_violations(1.0, 0.5) > 0, "d = {d}");
        assert!(rep.feasible);
    }
}

#[test]
fn log_y0_sample_mean_matches_its_closed_form() {
    let spec = tilt(16, 0.05);
    let exact = spec.expected_log_y0().unwrap();
    let path = regular_path(0.5, 1.0, 0.05);
    let eq = Equilibrium::profile(move |x| path.value(0.0, x));
    let mut rng = seeded(91);
    let draws: Vec<f64> = (0..4000)
        .map(|_| {
            let xi = sample_equilibrium(&spec.lattice, &eq, &mut rng)
                .unwrap()
                .energies;
            match spec.log_y0(&xi).unwrap() {
                InitialWeight::Finite(v) => v,
                InitialWeight::Excluded => unreachable!(),
            }
        })
        .collect();
    assert!(
        (mean(&draws) - exact).abs() <= 4.0 * std_error(&draws),
        "{} vs {exact}",
        mean(&draws)
    );
}
