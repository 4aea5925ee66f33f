use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mamba_wireless::gnn::random_graph_batch;
use mamba_wireless::Tape;
use mamba_wireless_bench::hybrid_model;

fn inference(c: &mut Criterion) {
    let model = hybrid_model();
    let p = model.store.frozen();
    let mut g = c.benchmark_group("hybrid_inference");
    g.sample_size(20);
    for k in [16usize, 64, 256] {
        let batch = random_graph_batch(&model, k, k as u64).expect("valid batch");
        g.bench_with_input(BenchmarkId::from_parameter(k), &batch, |b, batch| {
            b.iter(|| black_box(model.forward(&Tape::new(), &p, batch, 1.0).expect("valid")))
        });
    }
    g.finish();
}

criterion_group!(benches, inference);
criterion_main!(benches);
