use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use stormbench_core::analog::{fit_discriminant, Ridge};
use stormbench_core::harness::{generate_season, run_experiment, write_season, GenOptions};
use stormbench_core::induct::{induce_tree, ExampleSet};
use stormbench_core::inference::{backward_chain, staged_pipeline, ConfidenceState, PipelineSpec};
use stormbench_core::parcel::{integrate_updraft, BuoyancyProfile};
use stormbench_core::ruledsl::parse_rules;
use stormbench_core::{ExperimentConfig, FeatureMap, ProbTriple, RunOptions};

const SWAP: &str = include_str!("../../core/data/models/swap.rules");
const KASSPR: &str = include_str!("../../core/data/models/kasspr.rules");
const SEVERITY: &str = include_str!("../../core/data/models/willard/severity.csv");

fn features() -> FeatureMap {
    [
        ("cape", 1850.0),
        ("shear_kt", 38.0),
        ("dewpoint", 11.2),
        ("surface_temp", 27.0),
        ("upslope", 1.0),
        ("wind_speed", 9.0),
        ("cap_strength", 0.03),
        ("synoptic_support", 6.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn rules(c: &mut Criterion) {
    c.bench_function("parse_rules", |b| b.iter(|| parse_rules(black_box(SWAP), None).unwrap()));
    let swap = parse_rules(SWAP, None).unwrap();
    let state = ConfidenceState::from_rule_confidences(&swap);
    let f = features();
    c.bench_function("backward_chain", |b| {
        b.iter(|| backward_chain(&swap, black_box(&f), &state, ProbTriple::uniform()).unwrap())
    });
    let kasspr = parse_rules(KASSPR, None).unwrap();
    let spec =
        PipelineSpec::from_rules(&kasspr, 0.5, PipelineSpec::default_severe(), PipelineSpec::default_nonsevere())
            .unwrap();
    c.bench_function("staged_pipeline", |b| b.iter(|| staged_pipeline(&spec, black_box(&f)).unwrap()));
}

fn physics(c: &mut Criterion) {
    let profile = BuoyancyProfile::from_fn(12000.0, 10.0, |z| 0.04 * (1.0 - z / 9000.0));
    c.bench_function("integrate_updraft", |b| b.iter(|| integrate_updraft(black_box(&profile), 1e-5, 10.0).unwrap()));
}

fn learning(c: &mut Criterion) {
    let set = ExampleSet::from_csv(SEVERITY.as_bytes(), "class").unwrap();
    c.bench_function("induce_tree", |b| b.iter(|| induce_tree(black_box(&set))));
    let season = generate_season(&GenOptions { days: 1, ..GenOptions::default() });
    c.bench_function("fit_discriminant", |b| {
        b.iter(|| fit_discriminant(black_box(&season.library), Ridge::RelativeTrace(1e-6)).unwrap())
    });
}

fn season(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    write_season(&generate_season(&GenOptions { days: 8, history_days: 60, ..GenOptions::default() }), dir.path())
        .unwrap();
    let cfg = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    let mut group = c.benchmark_group("season");
    group.sample_size(10);
    group.bench_function("run_8_days", |b| {
        b.iter_batched(
            || cfg.clone(),
            |cfg| run_experiment(&cfg, RunOptions::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, rules, physics, learning, season);
criterion_main!(benches);
