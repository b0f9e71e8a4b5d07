//! Orchestrated edge weights.
//!
//! Each follower with two or more neighbors drives its outgoing weights
//! through a two-stage low-pass cascade toward a target that is `a_min` in
//! the idle phase and `gamma_ij * a_max` in the active phase. The priority
//! coefficient `gamma_ij` is itself filtered toward its lower bound when some
//! other neighbor has delivered strictly more broadcasts during the current
//! monitoring window, and toward its upper bound otherwise.
//!
//! Leaders copy the weight their neighbor assigned to them. Followers with a
//! single neighbor take the largest weight of that neighbor. Both rules read
//! the neighbor's state directly.

use serde::{Deserialize, Serialize};

use crate::graph::{Topology, WeightMatrix};
use crate::triggering::MonitorState;

/// When a node forgets the neighbors it excluded from the broadcast-count
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExclusionClear {
    /// When the node's monitoring window closes.
    #[default]
    #[serde(rename = "phase-end")]
    PhaseEnd,
    /// At every step in which the node's own broadcast rule holds, i.e. the
    /// node did not broadcast.
    #[serde(rename = "no-broadcast")]
    NoBroadcast,
}

impl std::str::FromStr for ExclusionClear {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phase-end" => Ok(Self::PhaseEnd),
            "no-broadcast" => Ok(Self::NoBroadcast),
            other => Err(format!(
                "unknown exclusion-clear mode `{other}` (phase-end|no-broadcast)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub zeta1: f64,
    pub zeta2: f64,
    pub psi: f64,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub exclusion_tolerance: f64,
    pub exclusion_clear: ExclusionClear,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self {
            zeta1: 500.0,
            zeta2: 500.0,
            psi: 500.0,
            gamma_lower: 0.3,
            gamma_upper: 1.0,
            a_min: 0.2,
            a_max: 3.0,
            exclusion_tolerance: 1e-2,
            exclusion_clear: ExclusionClear::PhaseEnd,
        }
    }
}

/// `rho_ij`: `a_min` while idle, `gamma * a_max` while active.
#[inline]
pub fn select_rho(active: bool, gamma: f64, a_min: f64, a_max: f64) -> f64 {
    if active {
        gamma * a_max
    } else {
        a_min
    }
}

/// Per-directed-pair coupling state, dense `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingState {
    n: usize,
    weights: WeightMatrix,
    theta: Vec<f64>,
    gamma: Vec<f64>,
    excluded: Vec<bool>,
}

impl CouplingState {
    /// Every edge starts at `a = theta = a0`, `gamma = gamma0`.
    pub fn new(topology: &Topology, a0: f64, theta0: f64, gamma0: f64) -> Self {
        let n = topology.n();
        let mut theta = vec![0.0; n * n];
        let mut gamma = vec![0.0; n * n];
        for (i, j) in topology.directed_pairs() {
            theta[i * n + j] = theta0;
            gamma[i * n + j] = gamma0;
        }
        Self {
            n,
            weights: WeightMatrix::uniform(topology, a0),
            theta,
            gamma,
            excluded: vec![false; n * n],
        }
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    #[inline]
    pub fn theta(&self, i: usize, j: usize) -> f64 {
        self.theta[i * self.n + j]
    }

    #[inline]
    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n + j]
    }

    #[inline]
    pub fn is_excluded(&self, i: usize, j: usize) -> bool {
        self.excluded[i * self.n + j]
    }

    pub fn set_a(&mut self, i: usize, j: usize, value: f64) {
        self.weights.set(i, j, value);
    }

    pub fn set_gamma(&mut self, i: usize, j: usize, value: f64) {
        self.gamma[i * self.n + j] = value;
    }

    pub fn set_theta(&mut self, i: usize, j: usize, value: f64) {
        self.theta[i * self.n + j] = value;
    }

    pub fn set_excluded(&mut self, i: usize, j: usize, value: bool) {
        self.excluded[i * self.n + j] = value;
    }

    pub fn clear_exclusions(&mut self, node: usize) {
        self.excluded[node * self.n..(node + 1) * self.n].fill(false);
    }

    /// Non-leader nodes with at least two neighbors run the filter dynamics;
    /// everyone else copies weights.
    pub fn is_dynamic(topology: &Topology, node: usize) -> bool {
        !topology.is_leader(node) && topology.degree(node) >= 2
    }

    /// One coupling step for the whole network: exclusions, priorities,
    /// targets and the weight cascade on every dynamic node, then the
    /// single-neighbor rule, then leader mirroring.
    pub fn update(
        &mut self,
        topology: &Topology,
        monitor: &MonitorState,
        params: &CouplingParams,
        dt: f64,
    ) {
        for node in 0..topology.n() {
            if !Self::is_dynamic(topology, node) {
                continue;
            }
            update_exclusions(
                node,
                topology,
                self,
                monitor,
                params.gamma_lower,
                params.exclusion_tolerance,
            );
            update_gamma(node, topology, self, monitor, params, dt);
            let active = monitor.is_active(node);
            let rho: Vec<f64> = topology
                .neighbors(node)
                .iter()
                .map(|&j| select_rho(active, self.gamma(node, j), params.a_min, params.a_max))
                .collect();
            integrate_weights(node, topology, self, &rho, params.zeta1, params.zeta2, dt);
        }
        apply_single_neighbor_rule(topology, self);
        apply_leader_mirror(topology, self);
    }
}

/// Moves each `gamma_ij` of `node` one Euler step toward its bound. Neighbors
/// excluded from the comparison keep their value. Nodes with fewer than two
/// comparable neighbors are left untouched.
pub fn update_gamma(
    node: usize,
    topology: &Topology,
    couplings: &mut CouplingState,
    monitor: &MonitorState,
    params: &CouplingParams,
    dt: f64,
) {
    let candidates: Vec<usize> = topology
        .neighbors(node)
        .iter()
        .copied()
        .filter(|&j| !couplings.is_excluded(node, j))
        .collect();
    if candidates.len() < 2 {
        return;
    }
    let targets: Vec<f64> = candidates
        .iter()
        .map(|&j| {
            let count = monitor.phi(node, j);
            let outranked = candidates
                .iter()
                .any(|&r| r != j && count < monitor.phi(node, r));
            if outranked {
                params.gamma_lower
            } else {
                params.gamma_upper
            }
        })
        .collect();
    for (&j, target) in candidates.iter().zip(targets) {
        let g = couplings.gamma(node, j);
        couplings.set_gamma(node, j, g - dt * params.psi * (g - target));
    }
}

/// Flags neighbors whose priority has been pushed to the lower bound during
/// an active phase.
pub fn update_exclusions(
    node: usize,
    topology: &Topology,
    couplings: &mut CouplingState,
    monitor: &MonitorState,
    gamma_lower: f64,
    tolerance: f64,
) {
    if !monitor.is_active(node) {
        return;
    }
    for &j in topology.neighbors(node) {
        if (couplings.gamma(node, j) - gamma_lower).abs() <= tolerance {
            couplings.set_excluded(node, j, true);
        }
    }
}

/// One explicit Euler step of the `theta -> a` cascade for the outgoing edges
/// of `node`; `rho` is indexed like `topology.neighbors(node)`. Both stages
/// advance from their values at the start of the step.
pub fn integrate_weights(
    node: usize,
    topology: &Topology,
    couplings: &mut CouplingState,
    rho: &[f64],
    zeta1: f64,
    zeta2: f64,
    dt: f64,
) {
    for (&j, &target) in topology.neighbors(node).iter().zip(rho) {
        let theta = couplings.theta(node, j);
        let a = couplings.a(node, j);
        couplings.set_theta(node, j, theta - dt * zeta2 * (theta - target));
        couplings.set_a(node, j, a - dt * zeta1 * (a - theta));
    }
}

/// Leaders adopt `a_ij = a_ji` for every neighbor `j`.
pub fn apply_leader_mirror(topology: &Topology, couplings: &mut CouplingState) {
    for i in (0..topology.n()).filter(|&i| topology.is_leader(i)) {
        for &j in topology.neighbors(i) {
            let mirrored = couplings.a(j, i);
            couplings.set_a(i, j, mirrored);
        }
    }
}

/// A follower with one neighbor `j` takes the largest outgoing weight of `j`.
pub fn apply_single_neighbor_rule(topology: &Topology, couplings: &mut CouplingState) {
    for i in 0..topology.n() {
        if topology.is_leader(i) || topology.degree(i) != 1 {
            continue;
        }
        let j = topology.neighbors(i)[0];
        let max = topology
            .neighbors(j)
            .iter()
            .map(|&r| couplings.a(j, r))
            .fold(f64::NEG_INFINITY, f64::max);
        couplings.set_a(i, j, max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_topology;
    use crate::triggering::{fire_broadcast, BroadcastStore, EventLog};

    fn p4() -> Topology {
        build_topology(4, &[(0, 1), (1, 2), (2, 3)], &[0]).unwrap()
    }

    #[test]
    fn rho_selection() {
        assert_eq!(select_rho(false, 1.0, 0.2, 3.0), 0.2);
        assert_eq!(select_rho(true, 1.0, 0.2, 3.0), 3.0);
        assert!((select_rho(true, 0.3, 0.3, 18.0) - 5.4).abs() < 1e-12);
    }

    /// Puts node 1 of P4 in monitoring and feeds it `from_leader` broadcasts
    /// from node 0 and `from_follower` from node 2.
    fn monitor_with_counts(t: &Topology, from_leader: usize, from_follower: usize) -> MonitorState {
        let mut mon = MonitorState::new(4);
        let store0 = BroadcastStore::new(&[1.0, 0.0, 0.0, 0.0]);
        crate::triggering::update_monitoring(1, t, &store0, 0.05, &mut mon);
        let mut store = store0.clone();
        let mut log = EventLog::new(4, 0.001);
        let mut step = 0;
        for _ in 0..from_leader {
            step += 1;
            fire_broadcast(0, step, 1.0, t, &mut store, &mut log, &mut mon, |_, _| {
                false
            });
        }
        for _ in 0..from_follower {
            step += 1;
            fire_broadcast(2, step, 0.0, t, &mut store, &mut log, &mut mon, |_, _| {
                false
            });
        }
        mon
    }

    #[test]
    fn gamma_prioritizes_busier_neighbor() {
        let t = p4();
        let params = CouplingParams::default();
        let mon = monitor_with_counts(&t, 5, 1);
        assert_eq!(mon.phi(1, 0), 5);
        assert_eq!(mon.phi(1, 2), 1);
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        for _ in 0..200 {
            update_gamma(1, &t, &mut cs, &mon, &params, 0.001);
        }
        assert!((cs.gamma(1, 0) - 1.0).abs() < 1e-12);
        assert!((cs.gamma(1, 2) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gamma_ties_share_upper_bound() {
        let t = p4();
        let params = CouplingParams::default();
        let mon = monitor_with_counts(&t, 3, 3);
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 0.6);
        update_gamma(1, &t, &mut cs, &mon, &params, 0.001);
        assert!(cs.gamma(1, 0) > 0.6 && cs.gamma(1, 2) > 0.6);
    }

    #[test]
    fn gamma_single_euler_step() {
        let t = p4();
        let params = CouplingParams::default();
        let mon = monitor_with_counts(&t, 5, 1);
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        update_gamma(1, &t, &mut cs, &mon, &params, 0.001);
        assert!((cs.gamma(1, 2) - 0.65).abs() < 1e-15);
        assert_eq!(cs.gamma(1, 0), 1.0);
    }

    #[test]
    fn excluded_neighbor_is_frozen_and_ignored() {
        let t = p4();
        let params = CouplingParams::default();
        let mon = monitor_with_counts(&t, 1, 5);
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 0.8);
        cs.set_excluded(1, 2, true);
        update_gamma(1, &t, &mut cs, &mon, &params, 0.001);
        // Only one comparable neighbor left: nothing moves.
        assert_eq!(cs.gamma(1, 0), 0.8);
        assert_eq!(cs.gamma(1, 2), 0.8);
    }

    #[test]
    fn exclusion_flags() {
        let t = p4();
        let mut mon = MonitorState::new(4);
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        cs.set_gamma(1, 2, 0.301);
        // Idle node: no exclusion.
        update_exclusions(1, &t, &mut cs, &mon, 0.3, 1e-2);
        assert!(!cs.is_excluded(1, 2));
        let store = BroadcastStore::new(&[0.0, 1.0, 0.0, 0.0]);
        crate::triggering::update_active_phase(1, &t, &store, 0.08, &mut mon);
        update_exclusions(1, &t, &mut cs, &mon, 0.3, 1e-2);
        assert!(cs.is_excluded(1, 2));
        assert!(!cs.is_excluded(1, 0));
        cs.clear_exclusions(1);
        assert!(!cs.is_excluded(1, 2));
    }

    #[test]
    fn cascade_step() {
        let t = p4();
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        integrate_weights(1, &t, &mut cs, &[3.0, 1.0], 500.0, 500.0, 0.001);
        assert_eq!(cs.theta(1, 0), 2.0);
        assert_eq!(cs.a(1, 0), 1.0);
        // Equilibrium a = theta = rho.
        assert_eq!(cs.theta(1, 2), 1.0);
        assert_eq!(cs.a(1, 2), 1.0);
        integrate_weights(1, &t, &mut cs, &[3.0, 1.0], 500.0, 500.0, 0.001);
        assert_eq!(cs.theta(1, 0), 2.5);
        assert_eq!(cs.a(1, 0), 1.5);
    }

    #[test]
    fn cascade_decays_monotonically_to_floor() {
        let t = p4();
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        let mut prev = cs.a(1, 0);
        for _ in 0..100 {
            integrate_weights(1, &t, &mut cs, &[0.2, 0.2], 500.0, 500.0, 0.001);
            let a = cs.a(1, 0);
            assert!(a <= prev && a >= 0.2);
            prev = a;
        }
        assert!((prev - 0.2).abs() < 1e-9);
    }

    #[test]
    fn leader_mirror_copies_follower_weight() {
        let t = p4();
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        cs.set_a(1, 0, 2.7);
        apply_leader_mirror(&t, &mut cs);
        assert_eq!(cs.a(0, 1), 2.7);
    }

    #[test]
    fn adjacent_leaders_freeze() {
        let t = build_topology(2, &[(0, 1)], &[0, 1]).unwrap();
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        let mon = MonitorState::new(2);
        for _ in 0..10 {
            cs.update(&t, &mon, &CouplingParams::default(), 0.001);
        }
        assert_eq!(cs.a(0, 1), 1.0);
        assert_eq!(cs.a(1, 0), 1.0);
    }

    #[test]
    fn single_neighbor_takes_max() {
        let t = p4();
        let mut cs = CouplingState::new(&t, 1.0, 1.0, 1.0);
        cs.set_a(2, 1, 2.5);
        cs.set_a(2, 3, 1.1);
        apply_single_neighbor_rule(&t, &mut cs);
        assert_eq!(cs.a(3, 2), 2.5);

        let pair = build_topology(2, &[(0, 1)], &[0]).unwrap();
        let mut cs = CouplingState::new(&pair, 1.0, 1.0, 1.0);
        cs.set_a(0, 1, 0.4);
        apply_single_neighbor_rule(&pair, &mut cs);
        assert_eq!(cs.a(1, 0), 0.4);
    }

    #[test]
    fn exclusion_clear_parses() {
        assert_eq!(
            "phase-end".parse::<ExclusionClear>(),
            Ok(ExclusionClear::PhaseEnd)
        );
        assert_eq!(
            "no-broadcast".parse::<ExclusionClear>(),
            Ok(ExclusionClear::NoBroadcast)
        );
        assert!("never".parse::<ExclusionClear>().is_err());
    }
}
