use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tflm_core::corpus::builtin_generator;
use tflm_core::spn::{log_evidence, map_state};
use tflm_core::tflm::{buggy_posteriors, ground_spn, map_subclasses, map_subclasses_direct};

fn inference(c: &mut Criterion) {
    let spec = builtin_generator();
    let synth = tflm_bench::corpus(10, 7);
    let program = synth
        .corpus
        .programs
        .iter()
        .max_by_key(|p| p.program.tree.len())
        .expect("non-empty corpus");
    let tree = &program.program.tree;
    let observed = program.observed();
    let grounded = ground_spn(&spec, tree, &observed).unwrap();
    let evidence = grounded.evidence(&spec, tree, &observed).unwrap();

    let mut group = c.benchmark_group(format!("tree_{}_nodes", tree.len()));
    group.bench_function("ground", |b| {
        b.iter(|| ground_spn(&spec, black_box(tree), &observed).unwrap())
    });
    group.bench_function("log_evidence", |b| {
        b.iter(|| log_evidence(&grounded.spn, black_box(&evidence)).unwrap())
    });
    group.bench_function("map_state", |b| {
        b.iter(|| map_state(&grounded.spn, black_box(&evidence)).unwrap())
    });
    group.bench_function("map_subclasses_grounded", |b| {
        b.iter(|| map_subclasses(&spec, black_box(tree), &program.attrs).unwrap())
    });
    group.bench_function("map_subclasses_direct", |b| {
        b.iter(|| map_subclasses_direct(&spec, black_box(tree), &program.attrs).unwrap())
    });
    group.bench_function("buggy_posteriors", |b| {
        b.iter(|| buggy_posteriors(&spec, black_box(tree), &observed).unwrap())
    });
    group.finish();
}

criterion_group!(benches, inference);
criterion_main!(benches);
