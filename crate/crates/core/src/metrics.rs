//! Run metrics and SETC/PETC comparisons.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::config::{ScenarioConfig, TopologySpec};
use crate::graph::{assemble_system_matrix, spectral_monitor, spectral_norm, GraphError, Topology};
use crate::signals::CommandSpec;
use crate::sim::{StabilitySample, StateTrace, WeightTrace};
use crate::triggering::{gap_stats, EventLog};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("trace length {len} is not a multiple of n = {n}")]
    RaggedTrace { len: usize, n: usize },
    #[error("runs are not comparable: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What must match for two runs to be compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub topology: TopologySpec,
    pub command: CommandSpec,
}

impl RunContext {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            seed: config.seed,
            dt: config.dt,
            horizon: config.horizon,
            topology: config.topology.clone(),
            command: config.command.clone(),
        }
    }
}

fn infinite_as_null<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Per-node RMS of `x_si - c`, averaged over nodes.
    pub rmse: f64,
    /// Same with the continuous states `x_i`.
    pub rmse_state: f64,
    /// Mean over samples of `sum_i u_i^2`.
    pub effort: f64,
    pub total_events: usize,
    pub per_node_events: Vec<usize>,
    /// Smallest gap between consecutive events of any node; `null` if no
    /// node fired twice.
    #[serde(serialize_with = "infinite_as_null")]
    pub min_gap_s: f64,
    pub max_spectral_real_part: f64,
    pub max_system_norm: f64,
    /// Largest finite-difference rate `||F(t) - F(t - h)||_2 / h` between
    /// stability samples.
    pub max_system_rate: f64,
    pub peak_control: f64,
    pub samples: usize,
    pub context: RunContext,
}

/// `(1/n) sum_i sqrt((1/M) sum_k (x_si(k) - c(k))^2)`. `x_s` is row-major
/// `M x n`.
pub fn compute_rmse(x_s: &[f64], command: &[f64], n: usize) -> Result<f64, MetricsError> {
    let m = command.len();
    if m == 0 || n == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    if x_s.len() != m * n {
        return Err(MetricsError::RaggedTrace { len: x_s.len(), n });
    }
    let mut sums = vec![0.0; n];
    for (row, &c) in x_s.chunks_exact(n).zip(command) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += (v - c) * (v - c);
        }
    }
    Ok(sums.iter().map(|s| (s / m as f64).sqrt()).sum::<f64>() / n as f64)
}

/// `(1/M) sum_k sum_i u_i(k)^2`. `u` is row-major `M x n`.
pub fn compute_effort(u: &[f64], n: usize) -> Result<f64, MetricsError> {
    if u.is_empty() || n == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    if !u.len().is_multiple_of(n) {
        return Err(MetricsError::RaggedTrace { len: u.len(), n });
    }
    let m = u.len() / n;
    let total: f64 = u
        .chunks_exact(n)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(total / m as f64)
}

/// Streaming version of the trace metrics, fed one sample per step. Sums
/// run in the same order as `compute_rmse` and `compute_effort`.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    n: usize,
    samples: usize,
    sq_err_broadcast: Vec<f64>,
    sq_err_state: Vec<f64>,
    effort: f64,
    peak_control: f64,
    max_real_part: f64,
    max_norm: f64,
    max_rate: f64,
}

impl MetricsAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            samples: 0,
            sq_err_broadcast: vec![0.0; n],
            sq_err_state: vec![0.0; n],
            effort: 0.0,
            peak_control: 0.0,
            max_real_part: f64::NEG_INFINITY,
            max_norm: 0.0,
            max_rate: 0.0,
        }
    }

    pub fn push_sample(&mut self, x_s: &[f64], x: &[f64], u: &[f64], c: f64) {
        for i in 0..self.n {
            self.sq_err_broadcast[i] += (x_s[i] - c) * (x_s[i] - c);
            self.sq_err_state[i] += (x[i] - c) * (x[i] - c);
        }
        self.effort += u.iter().map(|v| v * v).sum::<f64>();
        self.peak_control = u.iter().fold(self.peak_control, |m, v| m.max(v.abs()));
        self.samples += 1;
    }

    pub fn push_stability(&mut self, max_real_part: f64, norm: f64) {
        self.max_real_part = self.max_real_part.max(max_real_part);
        self.max_norm = self.max_norm.max(norm);
    }

    pub fn push_system_rate(&mut self, f: &DMatrix<f64>, previous: &DMatrix<f64>, elapsed: f64) {
        if elapsed > 0.0 {
            let diff = f - previous;
            let norm = diff.singular_values().iter().copied().fold(0.0, f64::max);
            self.max_rate = self.max_rate.max(norm / elapsed);
        }
    }

    pub fn finish(self, log: &EventLog, context: RunContext) -> RunMetrics {
        let m = self.samples.max(1) as f64;
        let n = self.n as f64;
        let rms = |sums: &[f64]| sums.iter().map(|s| (s / m).sqrt()).sum::<f64>() / n;
        let min_gap_s = gap_stats(log)
            .iter()
            .map(|g| g.min_gap_s)
            .fold(f64::INFINITY, f64::min);
        RunMetrics {
            rmse: rms(&self.sq_err_broadcast),
            rmse_state: rms(&self.sq_err_state),
            effort: self.effort / m,
            total_events: log.total(),
            per_node_events: log.per_node().to_vec(),
            min_gap_s,
            max_spectral_real_part: self.max_real_part,
            max_system_norm: self.max_norm,
            max_system_rate: self.max_rate,
            peak_control: self.peak_control,
            samples: self.samples,
            context,
        }
    }
}

/// Ratios are `a / b`; two zeros give 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rmse_ratio: f64,
    pub effort_ratio: f64,
    pub event_ratio: f64,
    pub peak_control_ratio: f64,
    pub fewer_events: bool,
    pub lower_effort: bool,
    pub lower_rmse: bool,
}

pub fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

pub fn compare_runs(a: &RunMetrics, b: &RunMetrics) -> Result<ComparisonReport, MetricsError> {
    let (ca, cb) = (&a.context, &b.context);
    if ca.topology != cb.topology {
        return Err(MetricsError::ConfigMismatch("topology".into()));
    }
    if ca.command != cb.command {
        return Err(MetricsError::ConfigMismatch("command".into()));
    }
    if ca.seed != cb.seed {
        return Err(MetricsError::ConfigMismatch(format!(
            "seed {} vs {}",
            ca.seed, cb.seed
        )));
    }
    if ca.dt != cb.dt || ca.horizon != cb.horizon {
        return Err(MetricsError::ConfigMismatch("dt/horizon".into()));
    }
    Ok(ComparisonReport {
        rmse_ratio: ratio(a.rmse, b.rmse),
        effort_ratio: ratio(a.effort, b.effort),
        event_ratio: ratio(a.total_events as f64, b.total_events as f64),
        peak_control_ratio: ratio(a.peak_control, b.peak_control),
        fewer_events: a.total_events < b.total_events,
        lower_effort: a.effort < b.effort,
        lower_rmse: a.rmse < b.rmse,
    })
}

/// Spectral monitor over a recorded weight trace, every `stride`-th sample.
pub fn stability_trace(
    topology: &Topology,
    weights: &WeightTrace,
    stride: usize,
) -> Result<Vec<StabilitySample>, MetricsError> {
    let n = topology.n();
    let mut out = Vec::new();
    for k in (0..weights.len()).step_by(stride.max(1)) {
        let system = assemble_system_matrix(topology, &weights.matrix(n, k))?;
        out.push(StabilitySample {
            step: k as u64,
            time: weights.time[k],
            max_real_part: spectral_monitor(&system)?,
            norm: spectral_norm(&system),
        });
    }
    Ok(out)
}

/// Interval over which `|c'| < threshold` held continuously.
#[derive(Debug, Clone, PartialEq)]
pub struct SettledWindow {
    pub start: f64,
    pub end: f64,
    /// `max_i |x_i - c|` at the last sample of the window.
    pub final_error: f64,
}

/// Maximal windows of at least `min_length` seconds in which the command
/// derivative stayed below `threshold`.
pub fn settled_windows(trace: &StateTrace, threshold: f64, min_length: f64) -> Vec<SettledWindow> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let len = trace.len();
    for k in 0..=len {
        let settled = k < len && trace.command_derivative[k].abs() < threshold;
        match (settled, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                let last = k - 1;
                if trace.time[last] - trace.time[s] >= min_length {
                    let c = trace.command[last];
                    let final_error = trace
                        .row(&trace.x, last)
                        .iter()
                        .map(|x| (x - c).abs())
                        .fold(0.0, f64::max);
                    out.push(SettledWindow {
                        start: trace.time[s],
                        end: trace.time[last],
                        final_error,
                    });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn context() -> RunContext {
        RunContext {
            seed: 1,
            dt: 0.001,
            horizon: 1.0,
            topology: TopologySpec::path(2),
            command: CommandSpec::default(),
        }
    }

    fn metrics(rmse: f64, effort: f64, events: usize) -> RunMetrics {
        RunMetrics {
            rmse,
            rmse_state: rmse,
            effort,
            total_events: events,
            per_node_events: vec![events, 0],
            min_gap_s: f64::INFINITY,
            max_spectral_real_part: -1.0,
            max_system_norm: 1.0,
            max_system_rate: 0.0,
            peak_control: 2.0,
            samples: 10,
            context: context(),
        }
    }

    #[test]
    fn rmse_examples() {
        let command = [0.3, -0.2, 0.1];
        let xs: Vec<f64> = command.iter().flat_map(|&c| [c, c]).collect();
        assert_eq!(compute_rmse(&xs, &command, 2).unwrap(), 0.0);
        assert_eq!(compute_rmse(&[0.5; 4], &[0.0; 4], 1).unwrap(), 0.5);
        assert_eq!(compute_rmse(&[], &[], 1), Err(MetricsError::EmptyTrace));
        // Node-wise RMS then mean: nodes offset by 1 and 3.
        let xs = [1.0, 3.0, -1.0, -3.0];
        assert_eq!(compute_rmse(&xs, &[0.0, 0.0], 2).unwrap(), 2.0);
    }

    #[test]
    fn effort_examples() {
        assert_eq!(compute_effort(&[0.0; 6], 3).unwrap(), 0.0);
        assert_eq!(compute_effort(&[1.0; 5], 1).unwrap(), 1.0);
        assert_eq!(compute_effort(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), 15.0);
        assert_eq!(compute_effort(&[], 2), Err(MetricsError::EmptyTrace));
    }

    #[test]
    fn self_comparison_is_unity() {
        let m = metrics(0.4, 0.2, 300);
        let r = compare_runs(&m, &m).unwrap();
        assert_eq!(r.rmse_ratio, 1.0);
        assert_eq!(r.effort_ratio, 1.0);
        assert_eq!(r.event_ratio, 1.0);
        assert!(!r.fewer_events && !r.lower_effort && !r.lower_rmse);
    }

    #[test]
    fn comparison_ratios_and_mismatch() {
        let a = metrics(0.3, 0.1, 290);
        let b = metrics(0.5, 0.2, 303);
        let r = compare_runs(&a, &b).unwrap();
        assert!((r.event_ratio - 290.0 / 303.0).abs() < 1e-15);
        assert!(r.fewer_events && r.lower_effort && r.lower_rmse);

        let mut c = metrics(0.3, 0.1, 290);
        c.context.seed = 2;
        assert!(matches!(
            compare_runs(&a, &c),
            Err(MetricsError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn infinite_gap_serializes_as_null() {
        let json = serde_json::to_value(metrics(0.1, 0.1, 1)).unwrap();
        assert!(json["min_gap_s"].is_null());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn settled_window_detection() {
        let mut trace = StateTrace::new(1);
        for k in 0..100 {
            trace.time.push(k as f64 * 0.1);
            let settled = (20..80).contains(&k);
            trace
                .command_derivative
                .push(if settled { 0.0 } else { 1.0 });
            trace.command.push(1.0);
            trace.x.push(if k == 79 { 1.04 } else { 0.0 });
            trace.x_s.push(0.0);
            trace.u.push(0.0);
        }
        let w = settled_windows(&trace, 0.01, 5.0);
        assert_eq!(w.len(), 1);
        assert!((w[0].start - 2.0).abs() < 1e-12 && (w[0].end - 7.9).abs() < 1e-12);
        assert!((w[0].final_error - 0.04).abs() < 1e-12);
        assert!(settled_windows(&trace, 0.01, 6.0).is_empty());
    }
}
