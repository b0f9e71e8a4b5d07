//! Broadcast triggering, zero-order-hold broadcast values, the event log and
//! the per-node monitoring state that feeds edge-weight prioritization.

use crate::graph::Topology;

/// `|x_i - x_si| > delta`. The boundary value does not fire.
#[inline]
pub fn check_broadcast_trigger(x: f64, x_s: f64, delta: f64) -> bool {
    (x - x_s).abs() > delta
}

/// Latest broadcast value of every node, held between that node's events.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastStore {
    x_s: Vec<f64>,
    last_event_time: Vec<Option<f64>>,
}

impl BroadcastStore {
    /// Initial broadcast `x_s(0) = x(0)`. Not an event.
    pub fn new(initial: &[f64]) -> Self {
        Self {
            x_s: initial.to_vec(),
            last_event_time: vec![None; initial.len()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.x_s
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.x_s[i]
    }

    pub fn last_event_time(&self, i: usize) -> Option<f64> {
        self.last_event_time[i]
    }

    /// Largest `|x_si - x_sj|` over the neighbors of `node`.
    pub fn max_neighbor_gap(&self, topology: &Topology, node: usize) -> f64 {
        let own = self.x_s[node];
        topology
            .neighbors(node)
            .iter()
            .map(|&j| (own - self.x_s[j]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub step: u64,
    pub time: f64,
    pub node: usize,
}

/// Append-only broadcast log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    dt: f64,
    events: Vec<Event>,
    per_node: Vec<usize>,
}

impl EventLog {
    pub fn new(n: usize, dt: f64) -> Self {
        Self {
            dt,
            events: Vec::new(),
            per_node: vec![0; n],
        }
    }

    pub fn push(&mut self, step: u64, node: usize) {
        debug_assert!(self.events.last().is_none_or(|e| e.step <= step));
        self.events.push(Event {
            step,
            time: step as f64 * self.dt,
            node,
        });
        self.per_node[node] += 1;
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn total(&self) -> usize {
        self.events.len()
    }

    pub fn per_node(&self) -> &[usize] {
        &self.per_node
    }

    pub fn n(&self) -> usize {
        self.per_node.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Monitoring (broadcast-gap above `delta`), active phase (gap above
/// `epsilon`) and the received-broadcast counters `phi_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    n: usize,
    monitoring: Vec<bool>,
    active: Vec<bool>,
    phi: Vec<u64>,
}

impl MonitorState {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            monitoring: vec![false; n],
            active: vec![false; n],
            phi: vec![0; n * n],
        }
    }

    pub fn is_monitoring(&self, i: usize) -> bool {
        self.monitoring[i]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn monitoring_flags(&self) -> &[bool] {
        &self.monitoring
    }

    pub fn active_flags(&self) -> &[bool] {
        &self.active
    }

    /// Broadcasts node `i` has counted from neighbor `j`.
    #[inline]
    pub fn phi(&self, i: usize, j: usize) -> u64 {
        self.phi[i * self.n + j]
    }

    fn reset_counts(&mut self, i: usize) {
        self.phi[i * self.n..(i + 1) * self.n].fill(0);
    }
}

/// Node `node` latches its current state and broadcasts it. Every monitoring
/// neighbor that has not excluded `node` counts the broadcast.
#[allow(clippy::too_many_arguments)]
pub fn fire_broadcast<F>(
    node: usize,
    step: u64,
    x_node: f64,
    topology: &Topology,
    store: &mut BroadcastStore,
    log: &mut EventLog,
    monitor: &mut MonitorState,
    is_excluded: F,
) where
    F: Fn(usize, usize) -> bool,
{
    store.x_s[node] = x_node;
    log.push(step, node);
    store.last_event_time[node] = Some(step as f64 * log.dt);
    for &receiver in topology.neighbors(node) {
        if monitor.monitoring[receiver] && !is_excluded(receiver, node) {
            monitor.phi[receiver * monitor.n + node] += 1;
        }
    }
}

/// Re-evaluates the monitoring condition from held broadcast values.
/// Returns `true` when monitoring just ended, after the counters of `node`
/// have been reset.
pub fn update_monitoring(
    node: usize,
    topology: &Topology,
    store: &BroadcastStore,
    delta: f64,
    monitor: &mut MonitorState,
) -> bool {
    let now = store.max_neighbor_gap(topology, node) > delta;
    let was = monitor.monitoring[node];
    monitor.monitoring[node] = now;
    if !now {
        monitor.reset_counts(node);
    }
    was && !now
}

pub fn update_active_phase(
    node: usize,
    topology: &Topology,
    store: &BroadcastStore,
    epsilon: f64,
    monitor: &mut MonitorState,
) {
    monitor.active[node] = store.max_neighbor_gap(topology, node) > epsilon;
}

/// Smallest gap between consecutive events of each node; `+inf` for nodes
/// with fewer than two events.
pub fn min_inter_event_gap(log: &EventLog) -> Vec<f64> {
    gap_stats(log).into_iter().map(|g| g.min_gap_s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapStats {
    pub node: usize,
    pub events: usize,
    pub min_gap_s: f64,
    pub mean_gap_s: f64,
}

pub fn gap_stats(log: &EventLog) -> Vec<GapStats> {
    let n = log.n();
    let mut last: Vec<Option<u64>> = vec![None; n];
    let mut min_steps: Vec<Option<u64>> = vec![None; n];
    let mut sum_steps = vec![0u64; n];
    for e in log.events() {
        if let Some(prev) = last[e.node] {
            let gap = e.step - prev;
            min_steps[e.node] = Some(min_steps[e.node].map_or(gap, |m| m.min(gap)));
            sum_steps[e.node] += gap;
        }
        last[e.node] = Some(e.step);
    }
    (0..n)
        .map(|node| {
            let events = log.per_node()[node];
            let (min_gap_s, mean_gap_s) = match min_steps[node] {
                Some(m) => (
                    m as f64 * log.dt(),
                    sum_steps[node] as f64 * log.dt() / (events - 1) as f64,
                ),
                None => (f64::INFINITY, f64::INFINITY),
            };
            GapStats {
                node,
                events,
                min_gap_s,
                mean_gap_s,
            }
        })
        .collect()
}
