use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proofread_core::adjacency::compute_adjacency;
use proofread_core::evalkit::pr_curve;
use proofread_core::evidence::EvidenceTensor;
use proofread_core::models::{CnnConfig, CnnParams, Network};
use proofread_core::Voxel;
use proofread_bench::fragment_volume;

fn adjacency(c: &mut Criterion) {
    let v = fragment_volume(96, 1);
    let mut g = c.benchmark_group("adjacency");
    g.sample_size(10);
    for factor in [1u32, 2, 4] {
        g.bench_with_input(BenchmarkId::new("factor", factor), &factor, |b, &f| {
            b.iter(|| compute_adjacency(&v, f, 64).unwrap())
        });
    }
    g.finish();
}

fn cnn_forward(c: &mut Criterion) {
    let config = CnnConfig::default();
    let params = CnnParams::init(&config).unwrap();
    let net = Network::<f32>::new(&config, &params).unwrap();
    let e = config.input_edge as u32;
    let n = (e as usize).pow(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gray: Vec<u8> = (0..n).map(|_| rng.random()).collect();
    let masks: Vec<u8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect();
    let t = EvidenceTensor::from_parts(e, Voxel { x: 0, y: 0, z: 0 }, gray, masks).unwrap();
    let mut g = c.benchmark_group("cnn");
    g.sample_size(20);
    g.bench_function("forward_33", |b| b.iter(|| net.probability(&t).unwrap()));
    g.finish();
}

fn pr(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<(f64, bool)> = (0..100_000).map(|_| (rng.random(), rng.random_bool(0.2))).collect();
    c.bench_function("pr_curve_100k", |b| b.iter(|| pr_curve(&scores).unwrap()));
}

criterion_group!(benches, adjacency, cnn_forward, pr);
criterion_main!(benches);
