//! Parallel-versus-serial timings for the hot tensor kernels.
//!
//! The library routes these through rayon when the `parallel` feature is
//! on (the default); `tensor::serial` holds the reference loops the
//! parallel paths are checked against. Each benchmark runs both on the
//! same input so the dispatch overhead and the crossover size are visible
//! directly: `cargo bench -p worldcache`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldcache::tensor::{serial, LatentTensor, TensorShape};

fn random_tensor(shape: TensorShape, seed: u64) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentTensor::from_vec(
        shape,
        (0..shape.element_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn shapes() -> Vec<TensorShape> {
    vec![
        // The default scenario latent and an eight-fold larger one.
        TensorShape::new(1, 4, 32, 32, 16).unwrap(),
        TensorShape::new(2, 8, 64, 64, 8).unwrap(),
    ]
}

fn bench_reductions(c: &mut Criterion) {
    let mut group = c.benchmark_group("l1_norm");
    for shape in shapes() {
        let x = random_tensor(shape, 1);
        let n = shape.element_count() as u64;
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("dispatched", n), &x, |b, x| {
            b.iter(|| x.l1_norm())
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &x, |b, x| {
            b.iter(|| serial::l1_norm(x))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("inner_product");
    for shape in shapes() {
        let x = random_tensor(shape, 2);
        let y = random_tensor(shape, 3);
        let n = shape.element_count() as u64;
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("dispatched", n), &(&x, &y), |b, (x, y)| {
            b.iter(|| x.inner_product(y).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &(&x, &y), |b, (x, y)| {
            b.iter(|| serial::inner_product(x, y))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("l1_distance");
    for shape in shapes() {
        let x = random_tensor(shape, 4);
        let y = random_tensor(shape, 5);
        let n = shape.element_count() as u64;
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("dispatched", n), &(&x, &y), |b, (x, y)| {
            b.iter(|| x.l1_distance(y).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &(&x, &y), |b, (x, y)| {
            b.iter(|| serial::l1_distance(x, y))
        });
    }
    group.finish();
}

fn bench_maps(c: &mut Criterion) {
    let mut group = c.benchmark_group("per_location_l1");
    for shape in shapes() {
        let x = random_tensor(shape, 6);
        let n = shape.element_count() as u64;
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("dispatched", n), &x, |b, x| {
            b.iter(|| x.per_location_l1())
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &x, |b, x| {
            b.iter(|| serial::per_location_l1(x))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("channel_variance_map");
    for shape in shapes() {
        let x = random_tensor(shape, 7);
        let n = shape.element_count() as u64;
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("dispatched", n), &x, |b, x| {
            b.iter(|| x.channel_variance_map())
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &x, |b, x| {
            b.iter(|| serial::channel_variance_map(x))
        });
    }
    group.finish();
}

criterion_group!(kernels, bench_reductions, bench_maps);
criterion_main!(kernels);
