use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rspn_engine::ensemble::{build_base_ensemble, EnsembleParams};
use rspn_engine::eval::{evaluate_workload, generate_workload, WorkloadParams};
use rspn_engine::learn::{learn_rspn, LearnParams};
use rspn_engine::par::Execution;
use rspn_engine::query::QueryOptions;
use rspn_engine::rdc::{pairwise_rdc, RdcParams};
use rspn_engine::schema::full_outer_join_sample;
use rspn_engine::synth::{generate, SynthConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let db = generate(&SynthConfig {
        tables: 3,
        root_rows: 20_000,
        ..SynthConfig::default()
    })
    .unwrap();
    let tables: Vec<String> = db.schema.tables.iter().map(|t| t.name.clone()).collect();
    let joined = full_outer_join_sample(&db, &tables, 50_000, 1).unwrap();

    let mut g = c.benchmark_group("pairwise_rdc");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| pairwise_rdc(black_box(&joined), &RdcParams::default(), exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("learn_rspn");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| learn_rspn(black_box(&joined), "bench", &LearnParams::default(), exec).unwrap())
        });
    }
    g.finish();

    let ens = build_base_ensemble(&db, &EnsembleParams::default(), &BTreeMap::new(), Execution::Parallel).unwrap();
    let queries = generate_workload(
        &db,
        &WorkloadParams {
            queries: 100,
            max_tables: 3,
            ..WorkloadParams::default()
        },
    );
    let mut g = c.benchmark_group("evaluate_workload");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_workload(black_box(&queries), &ens, &db, &QueryOptions::default(), exec))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
