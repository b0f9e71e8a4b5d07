//! Fixed undirected communication topology and the time-varying matrices
//! built over it.
//!
//! The edge set never changes during a run; only the weights do. Weights are
//! stored per direction (`a_ij` need not equal `a_ji`), so the Laplacian is
//! built from row sums and the closed-loop matrix `F = L + K D` is in general
//! non-symmetric.

use nalgebra::{linalg::Schur, DMatrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge {{{0}, {1}}} listed more than once")]
    DuplicateEdge(usize, usize),
    #[error("topology is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("no leader node")]
    NoLeader,
    #[error("topology has no nodes")]
    Empty,
    #[error("positive weight {value} on non-edge ({i}, {j})")]
    InconsistentWeights { i: usize, j: usize, value: f64 },
    #[error("weight ({i}, {j}) = {value} is negative or not finite")]
    InvalidWeight { i: usize, j: usize, value: f64 },
    #[error("weight matrix is {got}x{got}, topology has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigenvalue iteration did not converge")]
    EigenFailure,
}

/// Validated undirected graph with per-node leader flags.
///
/// Node indices are zero-based. Neighbor lists are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    leaders: Vec<bool>,
}

/// Builds and validates a topology. Edges are unordered pairs.
pub fn build_topology(
    n: usize,
    edges: &[(usize, usize)],
    leaders: &[usize],
) -> Result<Topology, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let mut normalized = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        for index in [i, j] {
            if index >= n {
                return Err(GraphError::IndexOutOfRange { index, n });
            }
        }
        if i == j {
            return Err(GraphError::SelfLoop(i));
        }
        normalized.push((i.min(j), i.max(j)));
    }
    normalized.sort_unstable();
    if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
        return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
    }

    let mut leader_flags = vec![false; n];
    for &l in leaders {
        if l >= n {
            return Err(GraphError::IndexOutOfRange { index: l, n });
        }
        leader_flags[l] = true;
    }
    if !leader_flags.iter().any(|&k| k) {
        return Err(GraphError::NoLeader);
    }

    let mut uf = UnionFind::new(n);
    for &(i, j) in &normalized {
        uf.union(i, j);
    }
    let components = uf.components();
    if components != 1 {
        return Err(GraphError::Disconnected { components });
    }

    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in &normalized {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    Ok(Topology {
        n,
        edges: normalized,
        neighbors,
        leaders: leader_flags,
    })
}

impl Topology {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_leader(&self, i: usize) -> bool {
        self.leaders[i]
    }

    pub fn leader_flags(&self) -> &[bool] {
        &self.leaders
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Every directed pair `(i, j)` with `{i, j}` an edge, ordered by `i` then `j`.
    pub fn directed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j)))
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Topology, GraphError> {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j)| (perm[i], perm[j]))
            .collect();
        let leaders: Vec<_> = (0..self.n)
            .filter(|&i| self.leaders[i])
            .map(|i| perm[i])
            .collect();
        build_topology(self.n, &edges, &leaders)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len())
            .filter(|&x| self.find(x) == x)
            .count()
    }
}

/// Dense `n x n` matrix of directed edge weights `a_ij`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    /// `value` on every directed edge of the topology, zero elsewhere.
    pub fn uniform(topology: &Topology, value: f64) -> Self {
        let mut w = Self::zeros(topology.n());
        for (i, j) in topology.directed_pairs() {
            w.set(i, j, value);
        }
        w
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.n + j] = value;
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.entries[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

/// `F(G(t)) = L(t) + K D(t)` together with its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub laplacian: DMatrix<f64>,
    /// Diagonal of the degree matrix, `d_i = sum_j a_ij`.
    pub degree: Vec<f64>,
    /// Diagonal of `K`, 1.0 for leaders.
    pub leader_gain: Vec<f64>,
    pub f: DMatrix<f64>,
}

pub fn assemble_system_matrix(
    topology: &Topology,
    weights: &WeightMatrix,
) -> Result<SystemMatrix, GraphError> {
    let n = topology.n();
    if weights.n() != n {
        return Err(GraphError::DimensionMismatch {
            expected: n,
            got: weights.n(),
        });
    }
    let mut laplacian = DMatrix::zeros(n, n);
    let mut degree = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let value = weights.get(i, j);
            if !value.is_finite() || value < 0.0 {
                return Err(GraphError::InvalidWeight { i, j, value });
            }
            if value > 0.0 && !topology.has_edge(i, j) {
                return Err(GraphError::InconsistentWeights { i, j, value });
            }
        }
        // Summing over neighbors in order keeps the diagonal bit-identical to
        // the off-diagonal sum, so row sums cancel exactly.
        let mut d = 0.0;
        for &j in topology.neighbors(i) {
            let a = weights.get(i, j);
            laplacian[(i, j)] = -a;
            d += a;
        }
        laplacian[(i, i)] = d;
        degree[i] = d;
    }
    let leader_gain: Vec<f64> = topology
        .leader_flags()
        .iter()
        .map(|&k| if k { 1.0 } else { 0.0 })
        .collect();
    let mut f = laplacian.clone();
    for i in 0..n {
        f[(i, i)] += leader_gain[i] * degree[i];
    }
    Ok(SystemMatrix {
        laplacian,
        degree,
        leader_gain,
        f,
    })
}

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

/// Largest real part over the eigenvalues of `-F`. Negative means the
/// unforced error dynamics are exponentially stable at this instant.
pub fn spectral_monitor(system: &SystemMatrix) -> Result<f64, GraphError> {
    let minus_f = -system.f.clone();
    let schur =
        Schur::try_new(minus_f, SCHUR_EPS, SCHUR_MAX_ITER).ok_or(GraphError::EigenFailure)?;
    let eig = schur.complex_eigenvalues();
    let max = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        Ok(max)
    } else {
        Err(GraphError::EigenFailure)
    }
}

/// Induced 2-norm of `F`.
pub fn spectral_norm(system: &SystemMatrix) -> f64 {
    system
        .f
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
