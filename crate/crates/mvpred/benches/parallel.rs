//! Parallel vs sequential throughput on the two batch-heavy stages: top-k
//! retrieval over the memory bank and completion-branch prediction.

use criterion::{criterion_group, criterion_main, Criterion};

use mvpred::completion::{self, CompletionParams, MaskPattern};
use mvpred::dataset::{generate_synthetic, SynthConfig, TargetTransform};
use mvpred::memorybank::{MemoryBank, Query};
use mvpred::runtime::{par_map, seq_map};

fn setup() -> (Vec<mvpred::dataset::VideoRecord>, MemoryBank, CompletionParams) {
    let cfg = SynthConfig {
        n_videos: 400,
        n_authors: 8,
        dims: [16, 16, 16],
        noise: 0.05,
        seed: 7,
        ..Default::default()
    };
    let records = generate_synthetic(&cfg).unwrap();
    let bank = MemoryBank::build(&records, cfg.dims, TargetTransform::Log1p).unwrap();
    let params = CompletionParams::init(cfg.dims, 32, 32, 3);
    (records, bank, params)
}

fn bench_retrieval(c: &mut Criterion) {
    let (records, bank, _) = setup();
    let queries: Vec<Query> = records
        .iter()
        .take(64)
        .map(|r| Query::from_record(r).unwrap())
        .collect();
    let mut g = c.benchmark_group("batch_retrieval");
    g.bench_function("par_map", |b| {
        b.iter(|| par_map(&queries, |q| bank.retrieve(q, 10, Some(&q.id)).unwrap()))
    });
    g.bench_function("seq_map", |b| {
        b.iter(|| seq_map(&queries, |q| bank.retrieve(q, 10, Some(&q.id)).unwrap()))
    });
    g.finish();
}

fn bench_completion(c: &mut Criterion) {
    let (records, _, params) = setup();
    let subset: Vec<_> = records.into_iter().take(64).collect();
    let all = MaskPattern::all_visible();
    let mut g = c.benchmark_group("batch_completion_predict");
    g.bench_function("par_map", |b| {
        b.iter(|| par_map(&subset, |r| completion::predict_from_incomplete(r, &all, &params).unwrap()))
    });
    g.bench_function("seq_map", |b| {
        b.iter(|| seq_map(&subset, |r| completion::predict_from_incomplete(r, &all, &params).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench_retrieval, bench_completion);
criterion_main!(benches);
