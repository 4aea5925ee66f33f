use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mamba_wireless::semcom::transmit_encode;
use mamba_wireless_bench::{jscd_model, sentence};

fn encode(c: &mut Criterion) {
    let seq = sentence(12, 100);
    let mut g = c.benchmark_group("transmit_encode");
    g.sample_size(20);
    for (name, mamba) in [("baseline", false), ("mamba", true)] {
        let model = jscd_model(mamba);
        g.bench_function(name, |b| b.iter(|| black_box(transmit_encode(&seq, &model).expect("valid"))));
    }
    g.finish();
}

criterion_group!(benches, encode);
criterion_main!(benches);
