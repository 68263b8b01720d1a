use kmplab::engine::{
    apply_jump, sample_equilibrium, simulate, EnergyConfig, Equilibrium, SimOptions,
};
use kmplab::lattice::{GreenKernel, Lattice};
use kmplab::rng::seeded;
use proptest::prelude::*;

fn lattice_strategy() -> impl Strategy<Value = Lattice> {
    prop_oneof![
        (3usize..24).prop_map(|n| (1, n)),
        (3usize..8).prop_map(|n| (2, n)),
        (3usize..5).prop_map(|n| (3, n))
    ]
    .prop_map(|(d, n)| Lattice::new(d, n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_form_is_positive(lat in lattice_strategy(), seed in any::<u64>()) {
        let kernel = GreenKernel::new(lat);
        let mut rng = seeded(seed);
        use rand::Rng;
        let f: Vec<f64> = (0..lat.num_sites()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        prop_assert!(kernel.quadratic_form(&f) >= -1e-12);
        prop_assert!((kernel.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn local_average_commutes_with_shifts(n in 8usize..32, shift in 0i64..32, eps in 0.05f64..0.4, seed in any::<u64>()) {
        let lat = Lattice::new(1, n).unwrap();
        let mut rng = seeded(seed);
        let xi = sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut rng).unwrap().energies;
        let shifted: Vec<f64> = (0..n).map(|s| xi[lat.translate(s, &[shift])]).collect();
        let a = lat.local_averages(&xi, eps).unwrap();
        let b = lat.local_averages(&shifted, eps).unwrap();
        for s in 0..n {
            prop_assert!((b[s] - a[lat.translate(s, &[shift])]).abs() < 1e-12);
        }
    }

    #[test]
    fn jumps_conserve_pair_energy(a in 0.0f64..10.0, b in 0.0f64..10.0, p in 0.0f64..=1.0) {
        let lat = Lattice::new(1, 4).unwrap();
        let mut cfg = EnergyConfig::new(lat, vec![a, b, 1.0, 2.0]).unwrap();
        apply_jump(&mut cfg, 0, p).unwrap();
        prop_assert!((cfg.total_energy() - (a + b + 3.0)).abs() <= 1e-12 * (a + b + 3.0));
        prop_assert!(cfg.energies.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn simulated_energy_is_conserved(lat in lattice_strategy(), seed in any::<u64>(), rho in 0.1f64..5.0) {
        let mut rng = seeded(seed);
        let init = sample_equilibrium(&lat, &Equilibrium::Uniform { rho }, &mut rng).unwrap();
        let traj = simulate(&init, &SimOptions::new(0.02).with_snapshots(4), &mut rng, seed).unwrap();
        prop_assert!(traj.max_energy_drift() <= 1e-12);
    }
}

#[test]
fn gamma_n_is_bounded_by_dimension() {
    for d in 1..=3 {
        for n in [4usize, 8, 16] {
            if d == 3 && n > 8 {
                continue;
            }
            let kernel = GreenKernel::new(Lattice::new(d, n).unwrap());
            let g = kernel.gamma();
            let cap = (n as f64).powi(d as i32 - 2) / (2.0 * d as f64);
            assert!(g >= 0.0 && g <= cap + 1e-12, "d={d} N={n}: {g} vs {cap}");
        }
    }
}

#[test]
fn green_origin_value_stays_bounded_relative_to_volume() {
    for d in 1..=3 {
        let sizes: &[usize] = if d == 3 { &[8, 16] } else { &[8, 16, 32] };
        let ratios: Vec<f64> = sizes
            .iter()
            .map(|&n| {
                let kernel = GreenKernel::new(Lattice::new(d, n).unwrap());
                kernel.value(0) / (n as f64).powi(d as i32)
            })
            .collect();
        assert!(
            ratios.iter().all(|r| r.is_finite() && *r <= 1.0),
            "d={d}: {ratios:?}"
        );
    }
}

#[test]
fn identical_seed_gives_identical_events() {
    let lat = Lattice::new(2, 6).unwrap();
    let run = || {
        let mut rng = seeded(99);
        let init = sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut rng).unwrap();
        simulate(&init, &SimOptions::new(0.05).with_flux(true), &mut rng, 99).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.events, b.events);
    assert_eq!(a.snapshots, b.snapshots);
    let fa: Vec<(f64, usize, f64)> = a.flux.unwrap().iter().map(|e| (e.t, e.edge, e.p)).collect();
    let fb: Vec<(f64, usize, f64)> = b.flux.unwrap().iter().map(|e| (e.t, e.edge, e.p)).collect();
    assert_eq!(fa, fb);
}
