//! Compares the parallel and sequential experiment runners on a small
//! batch. On a single-core host the two should be within noise of each
//! other; with more cores the parallel runner should win roughly linearly
//! in the job count.

use criterion::{criterion_group, criterion_main, Criterion};

use bdris::experiment::{
    run_experiment_sequential, run_experiment_with_threads, ExperimentKind, ExperimentSpec,
};

fn bench_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::canonical(ExperimentKind::RateRegion);
    spec.scenario.n_ris_elements = 4;
    spec.sweep_values = vec![0.25, 0.5, 0.75];
    spec.n_seeds = 2;
    spec.solver.max_iters = 3;
    spec.solver.record_trace = false;
    spec
}

fn experiment_batch(c: &mut Criterion) {
    let spec = bench_spec();
    let mut group = c.benchmark_group("experiment_batch");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| run_experiment_with_threads(&spec, None).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| run_experiment_sequential(&spec).unwrap())
    });
    group.finish();
}

criterion_group!(benches, experiment_batch);
criterion_main!(benches);
