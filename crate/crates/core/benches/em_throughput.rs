//! EM fit throughput with one worker versus the full pool, plus a seed sweep
//! run with `par_iter` versus a plain loop.
//!
//! Build with `--no-default-features` to benchmark the sequential fallback of
//! the row kernels themselves.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rayon::prelude::*;

use tagsentry::coarse::run_coarse;
use tagsentry::emulator::{generate, EmulatorConfig};
use tagsentry::truthdiscovery::fit;
use tagsentry::{featurize, par, Dataset, DetectionConfig};

fn fit_once(dataset: &Dataset, config: &DetectionConfig) -> usize {
    let flags = run_coarse(dataset, config).unwrap();
    let features = featurize(&dataset.records, config).unwrap();
    fit(dataset, &features, &flags, config).unwrap().iters
}

fn bench_fit(c: &mut Criterion) {
    let config = DetectionConfig::default();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut group = c.benchmark_group(format!("fit/parallel_kernels={}", par::is_parallel()));
    group.sample_size(10);
    for records in [2_000usize, 8_000, 17_487] {
        let (dataset, _) = generate(&EmulatorConfig {
            records_target: records,
            ..Default::default()
        })
        .unwrap();
        group.throughput(Throughput::Elements(dataset.len() as u64));
        group.bench_with_input(BenchmarkId::new("one_thread", records), &dataset, |b, d| {
            b.iter(|| single.install(|| fit_once(d, &config)))
        });
        group.bench_with_input(
            BenchmarkId::new("all_threads", records),
            &dataset,
            |b, d| b.iter(|| fit_once(d, &config)),
        );
    }
    group.finish();
}

fn bench_seed_sweep(c: &mut Criterion) {
    let config = DetectionConfig::default();
    let seeds: Vec<u64> = (0..8).collect();
    let run = |seed: &u64| {
        let (d, _) = generate(&EmulatorConfig {
            records_target: 3_000,
            seed: *seed,
            ..Default::default()
        })
        .unwrap();
        fit_once(&d, &config)
    };
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| seeds.iter().map(run).sum::<usize>())
    });
    group.bench_function("par_iter", |b| {
        b.iter(|| seeds.par_iter().map(run).sum::<usize>())
    });
    group.finish();
}

criterion_group!(benches, bench_fit, bench_seed_sweep);
criterion_main!(benches);
