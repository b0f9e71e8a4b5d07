use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use etcsim::campaign::{expand_jobs, run_batch_parallel, run_batch_sequential};
use etcsim::config::ScenarioConfig;
use etcsim::sim::{run_scenario, RunOptions};

fn jobs(seeds: u64, horizon: f64) -> Vec<ScenarioConfig> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example1.toml");
    let mut campaign = etcsim::parse_config(&path).expect("bundled config");
    campaign.seeds = (0..seeds).collect();
    for s in &mut campaign.scenarios {
        s.horizon = horizon;
    }
    expand_jobs(&campaign)
}

fn total_events(cfg: &ScenarioConfig) -> usize {
    run_scenario(cfg, RunOptions::metrics_only(cfg))
        .map(|r| r.metrics.total_events)
        .unwrap_or(0)
}

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("campaign");
    group.sample_size(10);
    for seeds in [2u64, 8] {
        let jobs = jobs(seeds, 10.0);
        group.bench_with_input(
            BenchmarkId::new("sequential", jobs.len()),
            &jobs,
            |b, jobs| b.iter(|| black_box(run_batch_sequential(jobs, total_events))),
        );
        group.bench_with_input(
            BenchmarkId::new("parallel", jobs.len()),
            &jobs,
            |b, jobs| b.iter(|| black_box(run_batch_parallel(jobs, total_events))),
        );
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
