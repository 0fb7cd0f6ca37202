use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use stemgnn::autodiff::Tape;
use stemgnn::spectral::{dft_dense, fft_radix2, jacobi_eigh};
use stemgnn_bench::{random_symmetric, random_tensor};

fn bench_dft(c: &mut Criterion) {
    let mut group = c.benchmark_group("dft");
    for len in [64usize, 256] {
        let x = random_tensor(1, &[len]);
        group.bench_with_input(BenchmarkId::new("dense", len), &x, |b, x| {
            b.iter(|| {
                let mut tape = Tape::new();
                let leaf = tape.leaf(x.clone());
                black_box(dft_dense(&mut tape, &leaf).unwrap());
            })
        });
        group.bench_with_input(BenchmarkId::new("radix2", len), &x, |b, x| {
            b.iter(|| black_box(fft_radix2(x).unwrap()))
        });
    }
    group.finish();
}

fn bench_eigh(c: &mut Criterion) {
    let mut group = c.benchmark_group("jacobi_eigh");
    for n in [8usize, 16, 32] {
        let m = random_symmetric(2, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| black_box(jacobi_eigh(m).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_dft, bench_eigh);
criterion_main!(benches);
