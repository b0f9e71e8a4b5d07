//! Scenario and campaign configuration.
//!
//! A campaign file is TOML (or the equivalent JSON document). Top-level keys
//! `seeds`, `output_dir` and `pairings`; a `[defaults]` table whose keys apply
//! to every scenario; and one `[[scenario]]` table per scenario whose keys
//! override the defaults. Node indices in files are one-based.
//!
//! ```toml
//! seeds = { start = 0, count = 20 }
//! output_dir = "out/example1"
//! pairings = [["petc", "setc"]]
//!
//! [defaults]
//! delta = 0.05
//! horizon = 320.0
//! topology = { n = 4, edges = [[1, 2], [2, 3], [3, 4]], leaders = [1] }
//! command = { kind = "filtered_square", amplitude = 1.0, period = 320.0, filter_time_constant = 5.0 }
//!
//! [[scenario]]
//! name = "setc"
//! mode = "setc"
//! a_const = 1.0
//!
//! [[scenario]]
//! name = "petc"
//! mode = "petc"
//! epsilon = 0.08
//! a_min = 0.2
//! a_max = 3.0
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{CouplingParams, ExclusionClear};
use crate::graph::{build_topology, GraphError, Topology};
use crate::signals::CommandSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: parse error: {message}")]
    Parse { location: String, message: String },
    #[error("{location}: {message}")]
    Validation { location: String, message: String },
}

impl ConfigError {
    fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            location: location.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Constant edge weights.
    Setc,
    /// Orchestrated time-varying edge weights.
    Petc,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Setc => "SETC",
            Mode::Petc => "PETC",
        })
    }
}

/// Graph description with one-based node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub leaders: Vec<usize>,
}

impl TopologySpec {
    pub fn path(n: usize) -> Self {
        Self {
            n,
            edges: (1..n).map(|i| [i, i + 1]).collect(),
            leaders: vec![1],
        }
    }

    pub fn build(&self) -> Result<Topology, GraphError> {
        let shift = |id: usize| {
            id.checked_sub(1).ok_or(GraphError::IndexOutOfRange {
                index: 0,
                n: self.n,
            })
        };
        let edges = self
            .edges
            .iter()
            .map(|&[i, j]| Ok((shift(i)?, shift(j)?)))
            .collect::<Result<Vec<_>, GraphError>>()?;
        let leaders = self
            .leaders
            .iter()
            .map(|&l| shift(l))
            .collect::<Result<Vec<_>, GraphError>>()?;
        build_topology(self.n, &edges, &leaders)
    }
}

fn default_dt() -> f64 {
    0.001
}
fn default_horizon() -> f64 {
    320.0
}
fn default_zeta() -> f64 {
    500.0
}
fn default_gamma_lower() -> f64 {
    0.3
}
fn default_gamma_upper() -> f64 {
    1.0
}
fn default_init_range() -> [f64; 2] {
    [-1.0, 1.0]
}
fn default_a0() -> f64 {
    1.0
}
fn default_exclusion_tolerance() -> f64 {
    1e-2
}
fn default_stability_stride() -> usize {
    10
}
fn default_trace_stride() -> usize {
    100
}

/// Every parameter of one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    pub topology: TopologySpec,
    /// Broadcast threshold, also used for the monitoring condition.
    pub delta: f64,
    /// Active-phase threshold. Required for PETC.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_zeta")]
    pub zeta1: f64,
    #[serde(default = "default_zeta")]
    pub zeta2: f64,
    #[serde(default = "default_zeta")]
    pub psi: f64,
    #[serde(default = "default_gamma_lower")]
    pub gamma_lower: f64,
    #[serde(default = "default_gamma_upper")]
    pub gamma_upper: f64,
    #[serde(default)]
    pub a_min: Option<f64>,
    #[serde(default)]
    pub a_max: Option<f64>,
    /// Fixed weight for SETC.
    #[serde(default)]
    pub a_const: Option<f64>,
    /// Initial `a_ij` and `theta_ij` for PETC.
    #[serde(default = "default_a0")]
    pub a0: f64,
    #[serde(default = "default_exclusion_tolerance")]
    pub exclusion_tolerance: f64,
    #[serde(default)]
    pub exclusion_clear: ExclusionClear,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub command: CommandSpec,
    #[serde(default = "default_init_range")]
    pub init_range: [f64; 2],
    #[serde(default = "default_stability_stride")]
    pub stability_stride: usize,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
}

impl ScenarioConfig {
    /// Paper defaults around a given topology; SETC with unit weights.
    pub fn new(name: &str, topology: TopologySpec, delta: f64) -> Self {
        Self {
            name: name.to_string(),
            mode: Mode::Setc,
            topology,
            delta,
            epsilon: None,
            zeta1: default_zeta(),
            zeta2: default_zeta(),
            psi: default_zeta(),
            gamma_lower: default_gamma_lower(),
            gamma_upper: default_gamma_upper(),
            a_min: None,
            a_max: None,
            a_const: Some(1.0),
            a0: default_a0(),
            exclusion_tolerance: default_exclusion_tolerance(),
            exclusion_clear: ExclusionClear::default(),
            dt: default_dt(),
            horizon: default_horizon(),
            seed: 0,
            command: CommandSpec::default(),
            init_range: default_init_range(),
            stability_stride: default_stability_stride(),
            trace_stride: default_trace_stride(),
        }
    }

    pub fn setc(mut self, a_const: f64) -> Self {
        self.mode = Mode::Setc;
        self.a_const = Some(a_const);
        self.epsilon = None;
        self.a_min = None;
        self.a_max = None;
        self
    }

    pub fn petc(mut self, epsilon: f64, a_min: f64, a_max: f64) -> Self {
        self.mode = Mode::Petc;
        self.a_const = None;
        self.epsilon = Some(epsilon);
        self.a_min = Some(a_min);
        self.a_max = Some(a_max);
        self
    }

    /// Number of integration steps; samples are `steps() + 1`.
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }

    pub fn coupling_params(&self) -> CouplingParams {
        CouplingParams {
            zeta1: self.zeta1,
            zeta2: self.zeta2,
            psi: self.psi,
            gamma_lower: self.gamma_lower,
            gamma_upper: self.gamma_upper,
            a_min: self.a_min.unwrap_or(0.0),
            a_max: self.a_max.unwrap_or(0.0),
            exclusion_tolerance: self.exclusion_tolerance,
            exclusion_clear: self.exclusion_clear,
        }
    }

    /// Checks every invariant and builds the topology.
    pub fn validate(&self) -> Result<Topology, ConfigError> {
        let loc = format!("scenario `{}`", self.name);
        let fail = |msg: String| Err(ConfigError::validation(loc.clone(), msg));
        let topology = self
            .topology
            .build()
            .map_err(|e| ConfigError::validation(loc.clone(), format!("topology: {e}")))?;

        let finite = [
            self.delta,
            self.zeta1,
            self.zeta2,
            self.psi,
            self.gamma_lower,
            self.gamma_upper,
            self.a0,
            self.exclusion_tolerance,
            self.dt,
            self.horizon,
            self.init_range[0],
            self.init_range[1],
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("all parameters must be finite".into());
        }
        if self.dt <= 0.0 {
            return fail(format!("dt must be > 0, got {}", self.dt));
        }
        // horizon 0 is a single-sample run.
        if self.horizon < 0.0 || (self.horizon > 0.0 && self.horizon < self.dt) {
            return fail(format!("horizon must be 0 or >= dt, got {}", self.horizon));
        }
        if self.delta <= 0.0 {
            return fail(format!("delta must be > 0, got {}", self.delta));
        }
        if self.init_range[0] > self.init_range[1] {
            return fail(format!("init_range {:?} is empty", self.init_range));
        }
        if self.stability_stride == 0 || self.trace_stride == 0 {
            return fail("stability_stride and trace_stride must be >= 1".into());
        }
        if let Err(msg) = self.command.validate() {
            return fail(msg);
        }
        match self.mode {
            Mode::Setc => match self.a_const {
                Some(a) if a > 0.0 && a.is_finite() => {}
                Some(a) => return fail(format!("a_const must be > 0, got {a}")),
                None => return fail("SETC scenario needs a_const".into()),
            },
            Mode::Petc => {
                let (Some(eps), Some(a_min), Some(a_max)) = (self.epsilon, self.a_min, self.a_max)
                else {
                    return fail("PETC scenario needs epsilon, a_min and a_max".into());
                };
                if !(eps > 0.0 && eps.is_finite()) {
                    return fail(format!("epsilon must be > 0, got {eps}"));
                }
                if !(a_min > 0.0 && a_min < a_max && a_max.is_finite()) {
                    return fail(format!(
                        "need 0 < a_min < a_max, got a_min={a_min} a_max={a_max}"
                    ));
                }
                if !(self.gamma_lower > 0.0 && self.gamma_lower < self.gamma_upper) {
                    return fail(format!(
                        "need 0 < gamma_lower < gamma_upper, got {} and {}",
                        self.gamma_lower, self.gamma_upper
                    ));
                }
                if self.a0 <= 0.0 {
                    return fail(format!("a0 must be > 0, got {}", self.a0));
                }
                if self.exclusion_tolerance <= 0.0 {
                    return fail("exclusion_tolerance must be > 0".into());
                }
                for (label, rate) in [
                    ("zeta1", self.zeta1),
                    ("zeta2", self.zeta2),
                    ("psi", self.psi),
                ] {
                    let product = rate * self.dt;
                    if !(product > 0.0 && product <= 1.0) {
                        return fail(format!(
                            "euler stability: {label}*dt = {product} must lie in (0, 1]"
                        ));
                    }
                }
            }
        }
        Ok(topology)
    }
}

/// A set of scenarios run over a list of seeds, with pairwise comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub scenarios: Vec<ScenarioConfig>,
    pub seeds: Vec<u64>,
    /// `(a, b)`: ratios are reported as `a / b`.
    pub pairings: Vec<(String, String)>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    #[serde(default)]
    seeds: Option<SeedSpec>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    pairings: Vec<(String, String)>,
    #[serde(default)]
    defaults: toml::Table,
    #[serde(default)]
    scenario: Vec<toml::Table>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Toml,
        }
    }
}

pub fn parse_config(path: &Path) -> Result<Campaign, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_campaign_str(&text, Format::for_path(path), &path.display().to_string())
}

/// Parses campaign text. `origin` prefixes error locations.
pub fn parse_campaign_str(
    text: &str,
    format: Format,
    origin: &str,
) -> Result<Campaign, ConfigError> {
    let raw: RawCampaign = match format {
        Format::Toml => toml::from_str(text).map_err(|e| ConfigError::Parse {
            location: toml_location(origin, text, &e),
            message: e.message().to_string(),
        })?,
        Format::Json => serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            location: format!("{origin}:{}:{}", e.line(), e.column()),
            message: e.to_string(),
        })?,
    };

    let mut scenarios = Vec::with_capacity(raw.scenario.len());
    for (index, table) in raw.scenario.into_iter().enumerate() {
        let mut merged = raw.defaults.clone();
        deep_merge(&mut merged, table);
        let name = merged
            .get("name")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{}", index + 1));
        let location = scenario_location(origin, text, &name, index);
        let scenario: ScenarioConfig =
            toml::Value::Table(merged)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    ConfigError::validation(&location, format!("scenario `{name}`: {e}"))
                })?;
        scenario.validate().map_err(|e| match e {
            ConfigError::Validation {
                location: l,
                message,
            } => ConfigError::validation(&location, format!("{l}: {message}")),
            other => other,
        })?;
        scenarios.push(scenario);
    }
    if scenarios.is_empty() {
        return Err(ConfigError::validation(
            origin,
            "campaign defines no scenarios",
        ));
    }

    let mut names = HashSet::new();
    for s in &scenarios {
        if !names.insert(s.name.as_str()) {
            return Err(ConfigError::validation(
                origin,
                format!("duplicate scenario name `{}`", s.name),
            ));
        }
    }

    for (a, b) in &raw.pairings {
        let find = |name: &str| {
            scenarios.iter().find(|s| s.name == name).ok_or_else(|| {
                ConfigError::validation(
                    origin,
                    format!("pairing references unknown scenario `{name}`"),
                )
            })
        };
        let (sa, sb) = (find(a)?, find(b)?);
        check_pairable(sa, sb)
            .map_err(|m| ConfigError::validation(origin, format!("pairing ({a}, {b}): {m}")))?;
    }

    let seeds = match raw.seeds {
        None => vec![0],
        Some(SeedSpec::List(list)) => list,
        Some(SeedSpec::Range { start, count }) => (start..start + count).collect(),
    };
    if seeds.is_empty() {
        return Err(ConfigError::validation(origin, "seed list is empty"));
    }

    Ok(Campaign {
        scenarios,
        seeds,
        pairings: raw.pairings,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
    })
}

/// Paired scenarios must share topology, command, dt and horizon.
pub fn check_pairable(a: &ScenarioConfig, b: &ScenarioConfig) -> Result<(), String> {
    if a.topology != b.topology {
        return Err("topologies differ".into());
    }
    if a.command != b.command {
        return Err("commands differ".into());
    }
    if a.dt != b.dt || a.horizon != b.horizon {
        return Err("dt or horizon differ".into());
    }
    if a.init_range != b.init_range {
        return Err("init_range differs".into());
    }
    Ok(())
}

fn deep_merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_location(origin: &str, text: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => format!("{origin}:{}", line_of_offset(text, span.start)),
        None => origin.to_string(),
    }
}

/// Best-effort line of the `name = "..."` key of a scenario, else of its
/// `[[scenario]]` header.
fn scenario_location(origin: &str, text: &str, name: &str, index: usize) -> String {
    let quoted = [format!("\"{name}\""), format!("'{name}'")];
    let by_name = text.lines().position(|line| {
        let trimmed = line.trim_start();
        (trimmed.starts_with("name") || trimmed.starts_with("\"name\""))
            && quoted.iter().any(|q| line.contains(q.as_str()))
    });
    let by_header = || {
        text.lines()
            .enumerate()
            .filter(|(_, l)| l.trim() == "[[scenario]]")
            .nth(index)
            .map(|(i, _)| i)
    };
    match by_name.or_else(by_header) {
        Some(line) => format!("{origin}:{}", line + 1),
        None => origin.to_string(),
    }
}
