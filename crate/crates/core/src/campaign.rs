//! Seed sweeps over a set of scenarios, with per-run artifact directories,
//! a summary CSV and per-pairing comparison reports.
//!
//! Runs are independent, so a batch can be spread over a thread pool
//! (`parallel` feature, on by default) or executed in order on the calling
//! thread. Both paths return results in job order and write identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Campaign, Mode, ScenarioConfig};
use crate::export;
use crate::metrics::{compare_runs, median, RunMetrics};
use crate::sim::{run_scenario, RunArtifacts, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CampaignOptions {
    pub execution: Execution,
    /// Also write long-format plot data under each run directory.
    pub plot_data: bool,
}

/// One scenario config per (scenario, seed), scenario-major.
pub fn expand_jobs(campaign: &Campaign) -> Vec<ScenarioConfig> {
    let mut jobs = Vec::with_capacity(campaign.scenarios.len() * campaign.seeds.len());
    for scenario in &campaign.scenarios {
        for &seed in &campaign.seeds {
            let mut cfg = scenario.clone();
            cfg.seed = seed;
            jobs.push(cfg);
        }
    }
    jobs
}

pub fn run_batch_sequential<T, F>(jobs: &[ScenarioConfig], f: F) -> Vec<T>
where
    F: Fn(&ScenarioConfig) -> T,
{
    jobs.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel<T, F>(jobs: &[ScenarioConfig], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&ScenarioConfig) -> T + Sync + Send,
{
    use rayon::prelude::*;
    jobs.par_iter().map(f).collect()
}

/// Without the `parallel` feature this is the sequential path.
#[cfg(not(feature = "parallel"))]
pub fn run_batch_parallel<T, F>(jobs: &[ScenarioConfig], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&ScenarioConfig) -> T + Sync + Send,
{
    run_batch_sequential(jobs, f)
}

pub fn run_batch<T, F>(jobs: &[ScenarioConfig], execution: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&ScenarioConfig) -> T + Sync + Send,
{
    match execution {
        Execution::Sequential => run_batch_sequential(jobs, f),
        Execution::Parallel => run_batch_parallel(jobs, f),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub outcome: Result<RunMetrics, String>,
}

impl RunRecord {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianMetrics {
    pub rmse: f64,
    pub effort: f64,
    pub total_events: f64,
    pub peak_control: f64,
}

impl MedianMetrics {
    fn of<'a>(runs: impl Iterator<Item = &'a RunMetrics> + Clone) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| median(&runs.clone().map(f).collect::<Vec<_>>());
        Self {
            rmse: col(|m| m.rmse),
            effort: col(|m| m.effort),
            total_events: col(|m| m.total_events as f64),
            peak_control: col(|m| m.peak_control),
        }
    }
}

/// Median ratios `a / b` over the seeds where both runs succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingReport {
    pub a: String,
    pub b: String,
    pub seeds_compared: usize,
    pub rmse_ratio: f64,
    pub effort_ratio: f64,
    pub event_ratio: f64,
    pub peak_control_ratio: f64,
    pub fraction_fewer_events: f64,
    pub fraction_lower_effort: f64,
    pub fraction_lower_rmse: f64,
    pub median_a: MedianMetrics,
    pub median_b: MedianMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub records: Vec<RunRecord>,
    pub pairings: Vec<PairingReport>,
    labels: Vec<(String, String)>,
}

impl CampaignReport {
    pub fn build(campaign: &Campaign, records: Vec<RunRecord>) -> Self {
        let pairings = campaign
            .pairings
            .iter()
            .map(|(a, b)| pairing_report(&records, a, b))
            .collect();
        let labels = campaign
            .scenarios
            .iter()
            .map(|s| (s.name.clone(), method_label(s)))
            .collect();
        Self {
            records,
            pairings,
            labels,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.outcome.is_err())
    }

    /// Successful runs of one scenario, in seed order.
    pub fn scenario_metrics<'a>(
        &'a self,
        scenario: &'a str,
    ) -> impl Iterator<Item = &'a RunMetrics> + Clone + 'a {
        self.records
            .iter()
            .filter(move |r| r.scenario == scenario)
            .filter_map(RunRecord::metrics)
    }

    pub fn medians(&self, scenario: &str) -> MedianMetrics {
        MedianMetrics::of(self.scenario_metrics(scenario))
    }

    pub fn pairing(&self, a: &str, b: &str) -> Option<&PairingReport> {
        self.pairings.iter().find(|p| p.a == a && p.b == b)
    }

    /// One row per (scenario, seed, mode).
    pub fn summary_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record([
            "scenario",
            "mode",
            "seed",
            "status",
            "rmse",
            "rmse_state",
            "effort",
            "total_events",
            "min_gap_s",
            "max_spectral_real_part",
            "max_system_norm",
            "max_system_rate",
            "peak_control",
            "error",
        ])
        .expect("write to memory");
        for r in &self.records {
            let head = [r.scenario.clone(), r.mode.to_string(), r.seed.to_string()];
            let row: Vec<String> = match &r.outcome {
                Ok(m) => head
                    .into_iter()
                    .chain([
                        "ok".to_string(),
                        export::fmt_f64(m.rmse),
                        export::fmt_f64(m.rmse_state),
                        export::fmt_f64(m.effort),
                        m.total_events.to_string(),
                        export::fmt_f64(m.min_gap_s),
                        export::fmt_f64(m.max_spectral_real_part),
                        export::fmt_f64(m.max_system_norm),
                        export::fmt_f64(m.max_system_rate),
                        export::fmt_f64(m.peak_control),
                        String::new(),
                    ])
                    .collect(),
                Err(e) => head
                    .into_iter()
                    .chain(["failed".to_string()])
                    .chain(std::iter::repeat_n(String::new(), 9))
                    .chain([e.clone()])
                    .collect(),
            };
            w.write_record(&row).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
    }

    /// Median RMSE, E and total events per scenario, one table row each.
    pub fn replication_table(&self, title: &str) -> String {
        let seeds = self.labels.first().map_or(0, |(name, _)| {
            self.records.iter().filter(|r| &r.scenario == name).count()
        });
        let mut out = format!("{title} (median over {seeds} seeds)\n\n");
        out.push_str("| Method | RMSE | E | Total Events |\n");
        out.push_str("|---|---:|---:|---:|\n");
        for (name, label) in &self.labels {
            let m = self.medians(name);
            out.push_str(&format!(
                "| {label} | {:.4} | {:.4} | {:.0} |\n",
                m.rmse, m.effort, m.total_events
            ));
        }
        out
    }
}

fn method_label(s: &ScenarioConfig) -> String {
    match s.mode {
        Mode::Setc => format!("SETC a={}", s.a_const.unwrap_or(f64::NAN)),
        Mode::Petc => format!(
            "PETC a in [{}, {}]",
            s.a_min.unwrap_or(f64::NAN),
            s.a_max.unwrap_or(f64::NAN)
        ),
    }
}

fn pairing_report(records: &[RunRecord], a: &str, b: &str) -> PairingReport {
    let ok = |name: &str| -> Vec<&RunRecord> {
        records
            .iter()
            .filter(|r| r.scenario == name && r.outcome.is_ok())
            .collect()
    };
    let (ra, rb) = (ok(a), ok(b));
    let mut reports = Vec::new();
    let mut ma = Vec::new();
    let mut mb = Vec::new();
    for x in &ra {
        if let Some(y) = rb.iter().find(|y| y.seed == x.seed) {
            let (mx, my) = (x.metrics().unwrap(), y.metrics().unwrap());
            if let Ok(rep) = compare_runs(mx, my) {
                reports.push(rep);
                ma.push(mx);
                mb.push(my);
            }
        }
    }
    let col = |f: fn(&crate::metrics::ComparisonReport) -> f64| {
        median(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let frac = |f: fn(&crate::metrics::ComparisonReport) -> bool| {
        if reports.is_empty() {
            f64::NAN
        } else {
            reports.iter().filter(|r| f(r)).count() as f64 / reports.len() as f64
        }
    };
    PairingReport {
        a: a.to_string(),
        b: b.to_string(),
        seeds_compared: reports.len(),
        rmse_ratio: col(|r| r.rmse_ratio),
        effort_ratio: col(|r| r.effort_ratio),
        event_ratio: col(|r| r.event_ratio),
        peak_control_ratio: col(|r| r.peak_control_ratio),
        fraction_fewer_events: frac(|r| r.fewer_events),
        fraction_lower_effort: frac(|r| r.lower_effort),
        fraction_lower_rmse: frac(|r| r.lower_rmse),
        median_a: MedianMetrics::of(ma.iter().copied()),
        median_b: MedianMetrics::of(mb.iter().copied()),
    }
}

fn record(cfg: &ScenarioConfig, outcome: Result<RunMetrics, String>) -> RunRecord {
    RunRecord {
        scenario: cfg.name.clone(),
        mode: cfg.mode,
        seed: cfg.seed,
        outcome,
    }
}

/// Runs every job and keeps only the metrics. Nothing touches the disk.
pub fn run_metrics(campaign: &Campaign, execution: Execution) -> CampaignReport {
    let jobs = expand_jobs(campaign);
    let records = run_batch(&jobs, execution, |cfg| {
        let outcome = run_scenario(cfg, RunOptions::metrics_only(cfg))
            .map(|a| a.metrics)
            .map_err(|e| e.to_string());
        record(cfg, outcome)
    });
    CampaignReport::build(campaign, records)
}

pub fn run_dir(out: &Path, scenario: &str, seed: u64) -> PathBuf {
    out.join("runs").join(scenario).join(format!("seed_{seed}"))
}

fn write_run(
    dir: &Path,
    run: &RunArtifacts,
    trace_stride: usize,
    plot_data: bool,
) -> io::Result<()> {
    if let Some(states) = &run.states {
        export::write_states(&dir.join("states.csv"), states)?;
    }
    if let Some(weights) = &run.weights {
        export::write_weights(&dir.join("weights.csv"), weights)?;
    }
    export::write_events(&dir.join("events.csv"), &run.events)?;
    export::write_gaps(&dir.join("gaps.csv"), &run.events)?;
    // The monitor is sampled far more often than the traces; keep the file at
    // trace resolution. The metrics already hold the extremes.
    let stride = trace_stride.max(1) as u64;
    let last = run.stability.last().map(|s| s.step);
    let stability: Vec<_> = run
        .stability
        .iter()
        .filter(|s| s.step % stride == 0 || Some(s.step) == last)
        .copied()
        .collect();
    export::write_stability(&dir.join("stability.csv"), &stability)?;
    export::write_metrics_json(&dir.join("metrics.json"), &run.metrics)?;
    if plot_data {
        export::emit_plot_data(
            &dir.join("plot"),
            run.states.as_ref(),
            run.weights.as_ref(),
            Some(&run.events),
        )?;
    }
    Ok(())
}

fn run_to_disk(cfg: &ScenarioConfig, out: &Path, plot_data: bool) -> RunRecord {
    let dir = run_dir(out, &cfg.name, cfg.seed);
    let prepare = || -> io::Result<()> {
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)
    };
    if let Err(e) = prepare() {
        return record(cfg, Err(format!("cannot create {}: {e}", dir.display())));
    }
    let outcome = match run_scenario(cfg, RunOptions::full(cfg)) {
        Ok(run) => write_run(&dir, &run, cfg.trace_stride, plot_data)
            .map(|()| run.metrics)
            .map_err(|e| format!("writing {}: {e}", dir.display())),
        Err(e) => Err(e.to_string()),
    };
    if let Err(msg) = &outcome {
        // Best effort: the summary carries the message either way.
        let _ = fs::write(dir.join("error.txt"), format!("{msg}\n"));
    }
    record(cfg, outcome)
}

/// Runs the campaign into `out`: `runs/<scenario>/seed_<seed>/` per run,
/// `summary.csv`, and `comparisons/<a>_vs_<b>.json` per pairing. A failed
/// run is recorded in the summary and does not stop the others.
pub fn run_campaign(
    campaign: &Campaign,
    out: &Path,
    options: CampaignOptions,
) -> io::Result<CampaignReport> {
    fs::create_dir_all(out)?;
    let jobs = expand_jobs(campaign);
    let records = run_batch(&jobs, options.execution, |cfg| {
        run_to_disk(cfg, out, options.plot_data)
    });
    let report = CampaignReport::build(campaign, records);

    fs::write(out.join("summary.csv"), report.summary_csv())?;
    if !report.pairings.is_empty() {
        let dir = out.join("comparisons");
        fs::create_dir_all(&dir)?;
        for p in &report.pairings {
            let mut text = serde_json::to_string_pretty(p).map_err(io::Error::other)?;
            text.push('\n');
            fs::write(dir.join(format!("{}_vs_{}.json", p.a, p.b)), text)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TopologySpec;

    fn small_campaign() -> Campaign {
        let topo = TopologySpec::path(3);
        let mut setc = ScenarioConfig::new("setc", topo.clone(), 0.05).setc(1.0);
        let mut petc = ScenarioConfig::new("petc", topo, 0.05).petc(0.08, 0.2, 3.0);
        for s in [&mut setc, &mut petc] {
            s.horizon = 2.0;
            s.command.period = 2.0;
            s.command.filter_time_constant = 0.2;
        }
        Campaign {
            scenarios: vec![setc, petc],
            seeds: vec![3, 1, 2],
            pairings: vec![("petc".into(), "setc".into())],
            output_dir: PathBuf::from("unused"),
        }
    }

    #[test]
    fn jobs_are_scenario_major() {
        let jobs = expand_jobs(&small_campaign());
        let keys: Vec<(&str, u64)> = jobs.iter().map(|j| (j.name.as_str(), j.seed)).collect();
        assert_eq!(
            keys,
            [
                ("setc", 3),
                ("setc", 1),
                ("setc", 2),
                ("petc", 3),
                ("petc", 1),
                ("petc", 2)
            ]
        );
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let c = small_campaign();
        let a = run_metrics(&c, Execution::Sequential);
        let b = run_metrics(&c, Execution::Parallel);
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.pairings, b.pairings);
        assert_eq!(a.pairings[0].seeds_compared, 3);
    }

    #[test]
    fn failed_run_is_recorded() {
        let mut c = small_campaign();
        // An absurd gain drives the Euler step unstable without failing validation.
        c.scenarios[0].a_const = Some(5000.0);
        let dir = tempfile::tempdir().unwrap();
        let report = run_campaign(&c, dir.path(), CampaignOptions::default()).unwrap();
        assert_eq!(report.failures().count(), 3);
        assert!(dir.path().join("runs/petc/seed_1/metrics.json").exists());
        assert!(dir.path().join("runs/setc/seed_1/error.txt").exists());
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 7);
        assert!(summary.lines().nth(1).unwrap().contains(",failed,"));
        assert_eq!(report.pairings[0].seeds_compared, 0);
    }

    #[test]
    fn table_lists_every_scenario() {
        let report = run_metrics(&small_campaign(), Execution::Sequential);
        let table = report.replication_table("Path of three");
        assert!(table.contains("| Method | RMSE | E | Total Events |"));
        assert!(table.contains("| SETC a=1 |"));
        assert!(table.contains("| PETC a in [0.2, 3] |"));
        assert!(table.contains("median over 3 seeds"));
    }
}
