//! CSV and JSON writers for run artifacts.
//!
//! Floats are written with 17 significant digits so that values round-trip
//! exactly. Node ids in every file are one-based.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::metrics::RunMetrics;
use crate::sim::{StabilitySample, StateTrace, WeightTrace};
use crate::triggering::{gap_stats, EventLog};

/// Round-trip formatting: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn writer(path: &Path) -> io::Result<csv::Writer<BufWriter<File>>> {
    let file = BufWriter::new(File::create(path)?);
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn finish(mut w: csv::Writer<BufWriter<File>>) -> io::Result<()> {
    w.flush()?;
    w.into_inner().map_err(|e| e.into_error())?.flush()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// `time_s,node_id,x,x_s,u,e`, one row per node per sample.
pub fn write_states(path: &Path, trace: &StateTrace) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["time_s", "node_id", "x", "x_s", "u", "e"])
        .map_err(csv_err)?;
    for k in 0..trace.len() {
        let t = fmt_f64(trace.time[k]);
        let c = trace.command[k];
        let (x, xs, u) = (
            trace.row(&trace.x, k),
            trace.row(&trace.x_s, k),
            trace.row(&trace.u, k),
        );
        for i in 0..trace.n {
            w.write_record([
                t.clone(),
                (i + 1).to_string(),
                fmt_f64(x[i]),
                fmt_f64(xs[i]),
                fmt_f64(u[i]),
                fmt_f64(x[i] - c),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `time_s,i,j,a_ij,theta_ij,gamma_ij,excluded`, one row per directed edge
/// per sample.
pub fn write_weights(path: &Path, trace: &WeightTrace) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "time_s", "i", "j", "a_ij", "theta_ij", "gamma_ij", "excluded",
    ])
    .map_err(csv_err)?;
    let p = trace.pairs.len();
    for k in 0..trace.len() {
        let t = fmt_f64(trace.time[k]);
        for (idx, &(i, j)) in trace.pairs.iter().enumerate() {
            let at = k * p + idx;
            w.write_record([
                t.clone(),
                (i + 1).to_string(),
                (j + 1).to_string(),
                fmt_f64(trace.a[at]),
                fmt_f64(trace.theta[at]),
                fmt_f64(trace.gamma[at]),
                u8::from(trace.excluded[at]).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `time_s,node_id`, in firing order.
pub fn write_events(path: &Path, log: &EventLog) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["time_s", "node_id"]).map_err(csv_err)?;
    for e in log.events() {
        w.write_record([fmt_f64(e.time), (e.node + 1).to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

/// `node_id,events,min_gap_s,mean_gap_s`. Nodes with fewer than two events
/// get `inf` gaps.
pub fn write_gaps(path: &Path, log: &EventLog) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node_id", "events", "min_gap_s", "mean_gap_s"])
        .map_err(csv_err)?;
    for g in gap_stats(log) {
        w.write_record([
            (g.node + 1).to_string(),
            g.events.to_string(),
            fmt_f64(g.min_gap_s),
            fmt_f64(g.mean_gap_s),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// `time_s,max_real_part,norm`.
pub fn write_stability(path: &Path, samples: &[StabilitySample]) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["time_s", "max_real_part", "norm"])
        .map_err(csv_err)?;
    for s in samples {
        w.write_record([fmt_f64(s.time), fmt_f64(s.max_real_part), fmt_f64(s.norm)])
            .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_metrics_json(path: &Path, metrics: &RunMetrics) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, metrics).map_err(io::Error::other)?;
    f.write_all(b"\n")?;
    f.flush()
}

/// Long-format `time_s,series_id,value` writer.
struct LongWriter {
    w: csv::Writer<BufWriter<File>>,
}

impl LongWriter {
    fn create(path: &Path) -> io::Result<Self> {
        let mut w = writer(path)?;
        w.write_record(["time_s", "series_id", "value"])
            .map_err(csv_err)?;
        Ok(Self { w })
    }

    fn row(&mut self, t: &str, series: &str, value: f64) -> io::Result<()> {
        self.w
            .write_record([t, series, &fmt_f64(value)])
            .map_err(csv_err)
    }

    fn close(self) -> io::Result<()> {
        finish(self.w)
    }
}

/// Tidy plot data in `dir`: `states.csv` (series `c`, `x_<i>`, `xs_<i>`),
/// `controls.csv` (`u_<i>`), `weights.csv` (`a_<i>_<j>`, `theta_<i>_<j>`,
/// `gamma_<i>_<j>`) and `events.csv` (`time_s,node_id`). Missing traces give
/// header-only files.
pub fn emit_plot_data(
    dir: &Path,
    states: Option<&StateTrace>,
    weights: Option<&WeightTrace>,
    events: Option<&EventLog>,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut st = LongWriter::create(&dir.join("states.csv"))?;
    let mut ctl = LongWriter::create(&dir.join("controls.csv"))?;
    if let Some(trace) = states {
        let x_ids: Vec<String> = (1..=trace.n).map(|i| format!("x_{i}")).collect();
        let xs_ids: Vec<String> = (1..=trace.n).map(|i| format!("xs_{i}")).collect();
        let u_ids: Vec<String> = (1..=trace.n).map(|i| format!("u_{i}")).collect();
        for k in 0..trace.len() {
            let t = fmt_f64(trace.time[k]);
            st.row(&t, "c", trace.command[k])?;
            for i in 0..trace.n {
                st.row(&t, &x_ids[i], trace.row(&trace.x, k)[i])?;
                st.row(&t, &xs_ids[i], trace.row(&trace.x_s, k)[i])?;
                ctl.row(&t, &u_ids[i], trace.row(&trace.u, k)[i])?;
            }
        }
    }
    st.close()?;
    ctl.close()?;

    let mut wt = LongWriter::create(&dir.join("weights.csv"))?;
    if let Some(trace) = weights {
        let p = trace.pairs.len();
        let ids: Vec<[String; 3]> = trace
            .pairs
            .iter()
            .map(|&(i, j)| {
                let (i, j) = (i + 1, j + 1);
                [
                    format!("a_{i}_{j}"),
                    format!("theta_{i}_{j}"),
                    format!("gamma_{i}_{j}"),
                ]
            })
            .collect();
        for k in 0..trace.len() {
            let t = fmt_f64(trace.time[k]);
            for (idx, id) in ids.iter().enumerate() {
                wt.row(&t, &id[0], trace.a[k * p + idx])?;
                wt.row(&t, &id[1], trace.theta[k * p + idx])?;
                wt.row(&t, &id[2], trace.gamma[k * p + idx])?;
            }
        }
    }
    wt.close()?;

    match events {
        Some(log) => write_events(&dir.join("events.csv"), log),
        None => write_events(&dir.join("events.csv"), &EventLog::new(0, 1.0)),
    }
}
