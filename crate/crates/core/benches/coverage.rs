//! Sequential against rayon-parallel execution of the Monte Carlo and
//! prediction-set hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use conformal_ensemble::conformal::{calibrate, predict_sets_with};
use conformal_ensemble::ensemble::average_scores_with;
use conformal_ensemble::simulator::{coverage_trial_with, simulate, ScoreSource, SimulatorConfig};
use conformal_ensemble::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn coverage_trials(c: &mut Criterion) {
    let config = SimulatorConfig::default();
    let mut group = c.benchmark_group("coverage_trial");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, 100), &exec, |b, &exec| {
            b.iter(|| coverage_trial_with(&config, 0.1, 500, 500, 100, ScoreSource::Ensemble, exec).unwrap())
        });
    }
    group.finish();
}

fn fusion_and_sets(c: &mut Criterion) {
    let config = SimulatorConfig { samples_per_domain: vec![20_000; 3], ..SimulatorConfig::default() };
    let experts = simulate(&config).unwrap();
    let artifact = calibrate(&experts[0], 0.1).unwrap();

    let mut group = c.benchmark_group("average_scores");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| average_scores_with(&experts, None, exec).unwrap()));
    }
    group.finish();

    let fused = average_scores_with(&experts, None, Execution::Sequential).unwrap();
    let mut group = c.benchmark_group("predict_sets");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| predict_sets_with(fused.ids(), fused.scores(), &artifact, true, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, coverage_trials, fusion_and_sets);
criterion_main!(benches);
