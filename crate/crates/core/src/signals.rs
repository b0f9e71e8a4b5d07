//! Command signal `c(t)` given to the leaders, and its derivative.
//!
//! Square and step commands are passed through a first-order low-pass filter
//! integrated with the simulation step, so the exposed `c(t)` is continuous
//! with a bounded derivative.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    FilteredSquare,
    Step,
    Constant,
    Sinusoid,
}

/// Square: `offset +/- amplitude`, high for the first half of each period.
/// Step: jumps from `offset` to `offset + amplitude` at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub kind: CommandKind,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_filter_time_constant")]
    pub filter_time_constant: f64,
    #[serde(default)]
    pub offset: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_period() -> f64 {
    320.0
}

fn default_filter_time_constant() -> f64 {
    5.0
}

impl Default for CommandSpec {
    fn default() -> Self {
        Self {
            kind: CommandKind::FilteredSquare,
            amplitude: default_amplitude(),
            period: default_period(),
            filter_time_constant: default_filter_time_constant(),
            offset: 0.0,
        }
    }
}

impl CommandSpec {
    pub fn constant(offset: f64) -> Self {
        Self {
            kind: CommandKind::Constant,
            offset,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.amplitude,
            self.period,
            self.filter_time_constant,
            self.offset,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err("command parameters must be finite".into());
        }
        let needs_period = matches!(
            self.kind,
            CommandKind::FilteredSquare | CommandKind::Sinusoid
        );
        if needs_period && self.period <= 0.0 {
            return Err(format!("command period must be > 0, got {}", self.period));
        }
        let filtered = matches!(self.kind, CommandKind::FilteredSquare | CommandKind::Step);
        if filtered && self.filter_time_constant <= 0.0 {
            return Err(format!(
                "command filter_time_constant must be > 0, got {}",
                self.filter_time_constant
            ));
        }
        Ok(())
    }

    /// Unfiltered target the low-pass stage is driven by.
    pub fn raw_target(&self, t: f64) -> f64 {
        match self.kind {
            CommandKind::FilteredSquare => {
                if t.rem_euclid(self.period) < 0.5 * self.period {
                    self.offset + self.amplitude
                } else {
                    self.offset - self.amplitude
                }
            }
            CommandKind::Step => self.offset + self.amplitude,
            CommandKind::Constant => self.offset,
            CommandKind::Sinusoid => self.offset + self.amplitude * (TAU * t / self.period).sin(),
        }
    }

    fn is_filtered(&self) -> bool {
        matches!(self.kind, CommandKind::FilteredSquare | CommandKind::Step)
    }

    /// Bound on `|c'(t)|` over all `t`.
    pub fn derivative_bound(&self) -> f64 {
        match self.kind {
            CommandKind::FilteredSquare => 2.0 * self.amplitude.abs() / self.filter_time_constant,
            CommandKind::Step => self.amplitude.abs() / self.filter_time_constant,
            CommandKind::Constant => 0.0,
            CommandKind::Sinusoid => self.amplitude.abs() * TAU / self.period,
        }
    }
}

/// Stateful generator advanced one simulation step at a time.
#[derive(Debug, Clone)]
pub struct CommandGenerator {
    spec: CommandSpec,
    dt: f64,
    step: u64,
    filter: f64,
}

impl CommandGenerator {
    /// The filter starts at rest at `offset`.
    pub fn new(spec: CommandSpec, dt: f64) -> Self {
        let filter = spec.offset;
        Self {
            spec,
            dt,
            step: 0,
            filter,
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn value(&self) -> f64 {
        if self.spec.is_filtered() {
            self.filter
        } else {
            self.spec.raw_target(self.time())
        }
    }

    pub fn derivative(&self) -> f64 {
        let t = self.time();
        match self.spec.kind {
            CommandKind::FilteredSquare | CommandKind::Step => {
                (self.spec.raw_target(t) - self.filter) / self.spec.filter_time_constant
            }
            CommandKind::Constant => 0.0,
            CommandKind::Sinusoid => {
                let w = TAU / self.spec.period;
                self.spec.amplitude * w * (w * t).cos()
            }
        }
    }

    pub fn advance(&mut self) {
        if self.spec.is_filtered() {
            let drive = self.spec.raw_target(self.time());
            self.filter += self.dt / self.spec.filter_time_constant * (drive - self.filter);
        }
        self.step += 1;
    }

    pub fn spec(&self) -> &CommandSpec {
        &self.spec
    }
}

fn generator_at(spec: &CommandSpec, t: f64, dt: f64) -> CommandGenerator {
    let steps = (t / dt).round() as u64;
    let mut g = CommandGenerator::new(spec.clone(), dt);
    for _ in 0..steps {
        g.advance();
    }
    g
}

/// `c(t)` on the step grid of `dt`, replayed from rest.
pub fn command_value(spec: &CommandSpec, t: f64, dt: f64) -> f64 {
    generator_at(spec, t, dt).value()
}

/// `c'(t)` on the step grid of `dt`, replayed from rest.
pub fn command_derivative(spec: &CommandSpec, t: f64, dt: f64) -> f64 {
    generator_at(spec, t, dt).derivative()
}
