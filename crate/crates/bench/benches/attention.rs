use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stemgnn::autodiff::Tape;
use stemgnn::correlation::{attention_weights, AttentionParams};
use stemgnn_bench::random_tensor;

// The attention step is the O(N^2 d) part of the correlation layer; the
// group makes the quadratic growth visible across node counts.
fn bench_attention(c: &mut Criterion) {
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = AttentionParams::init(d, d, &mut rng);
    let mut group = c.benchmark_group("attention_weights");
    for n in [128usize, 256, 512] {
        let r = random_tensor(n as u64, &[n, d]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &r, |b, r| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let leaf = tape.leaf(r.clone());
                black_box(attention_weights(&mut tape, &bound, &leaf).unwrap());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_attention);
criterion_main!(benches);
