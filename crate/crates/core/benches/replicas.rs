use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kmplab::acceptance::regular_path;
use kmplab::engine::{sample_equilibrium, simulate, Equilibrium, SimOptions};
use kmplab::exec::{map_replicas, ExecMode};
use kmplab::fields::optimal_control;
use kmplab::lattice::Lattice;
use kmplab::rng::{replica_seed, seeded};

fn replica_batch(mode: ExecMode, n: usize, count: usize) -> f64 {
    let lat = Lattice::new(1, n).unwrap();
    let opts = SimOptions::new(0.05);
    map_replicas(mode, count, |r| {
        let seed = replica_seed(7, r as u64);
        let mut rng = seeded(seed);
        let init = sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut rng).unwrap();
        simulate(&init, &opts, &mut rng, seed).unwrap().events as f64
    })
    .iter()
    .sum()
}

fn control_batch(mode: ExecMode, slices: usize) -> f64 {
    let path = regular_path(0.5, 1.0, 0.1);
    map_replicas(mode, slices, |i| {
        optimal_control(&path, 0.1 * i as f64 / slices as f64, 256)
            .unwrap()
            .energy()
    })
    .iter()
    .sum()
}

fn modes() -> Vec<(&'static str, ExecMode)> {
    let mut v = vec![("sequential", ExecMode::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", ExecMode::Parallel));
    }
    v
}

fn bench_replicas(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmp_replicas");
    group.sample_size(10);
    for n in [32usize, 64] {
        for (name, mode) in modes() {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| replica_batch(mode, n, 32))
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("control_slices");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(name, |b| b.iter(|| control_batch(mode, 16)));
    }
    group.finish();
}

criterion_group!(benches, bench_replicas);
criterion_main!(benches);
