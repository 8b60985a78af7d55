//! Parallel vs single-worker cost of the collision quadrature kernels.
//!
//! `cargo bench` compares a one-thread pool with the default pool; building
//! with `--no-default-features` replaces both with the plain sequential path.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relkin::discretization::{build_grid, AngularRule};
use relkin::kernel_ops::{CollisionEngine, KernelModel};
use relkin::par;

fn engine(n: usize) -> CollisionEngine {
    let grid = Arc::new(build_grid(6.0, n).unwrap());
    CollisionEngine::new(KernelModel::soft(1.0, 0.0).unwrap(), grid, AngularRule::new(4, 8, 0.0).unwrap()).unwrap()
}

fn bench(c: &mut Criterion) {
    let eng = engine(7);
    let jm = eng.grid().maxwellian().to_vec();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut g = c.benchmark_group("gain_loss_7");
    g.sample_size(10);
    for (label, t) in [("sequential", 1), ("parallel", threads)] {
        g.bench_with_input(BenchmarkId::new(label, t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || eng.gain_loss(&jm, &jm).unwrap()))
        });
    }
    g.finish();
    let mut g = c.benchmark_group("collision_frequency_7");
    for (label, t) in [("sequential", 1), ("parallel", threads)] {
        g.bench_with_input(BenchmarkId::new(label, t), &t, |b, &t| b.iter(|| par::with_threads(t, || eng.nu_nodes())));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
