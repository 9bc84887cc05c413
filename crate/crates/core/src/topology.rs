//! CAV communication graph, consensus weights, and the distributed
//! observability certificate.
//!
//! Adjacency convention: `adj[i][j] == true` means CAV `i` receives from CAV
//! `j`, i.e. `j ∈ N(i)`. Self-loops are always present.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::linalg::{is_diagonal, kronecker};
use crate::matstat::{Matrix, RngStream, Vector};

pub const ER_MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusRule {
    Uniform,
    MetropolisHastings,
    Given(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct CavNetwork {
    pub n: usize,
    pub adjacency: Vec<Vec<bool>>,
    pub w: Matrix,
    pub neighborhoods: Vec<Vec<usize>>,
}

fn with_self_loops(adj: &[Vec<bool>]) -> Result<Vec<Vec<bool>>> {
    let n = adj.len();
    if adj.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("adjacency must be square".into()));
    }
    let mut a = adj.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = true;
    }
    Ok(a)
}

/// Row-stochastic `W` with the sparsity of `adj` (self-loops added).
pub fn build_consensus_matrix(adj: &[Vec<bool>], rule: &ConsensusRule) -> Result<Matrix> {
    let adj = with_self_loops(adj)?;
    let n = adj.len();
    let deg: Vec<usize> = adj
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count() - 1)
        .collect();
    let mut w = Matrix::zeros(n, n);
    match rule {
        ConsensusRule::Uniform => {
            for i in 0..n {
                let share = 1.0 / (deg[i] + 1) as f64;
                for j in 0..n {
                    if adj[i][j] {
                        w[(i, j)] = share;
                    }
                }
            }
        }
        ConsensusRule::MetropolisHastings => {
            for i in 0..n {
                let mut off = 0.0;
                for j in 0..n {
                    if i != j && adj[i][j] {
                        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
                        w[(i, j)] = v;
                        off += v;
                    }
                }
                w[(i, i)] = 1.0 - off;
            }
        }
        ConsensusRule::Given(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Dimension("given W does not match the graph".into()));
            }
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    let v = rows[i][j];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Domain(format!("W[{i}][{j}] = {v} outside [0, 1]")));
                    }
                    if v > 0.0 && !adj[i][j] {
                        return Err(Error::Domain(format!("W[{i}][{j}] > 0 without an edge")));
                    }
                    w[(i, j)] = v;
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain(format!("row {i} of W sums to {sum}")));
                }
            }
        }
    }
    Ok(w)
}

fn reach_all(adj: &[Vec<bool>], forward: bool) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let edge = if forward { adj[v][u] } else { adj[u][v] };
            if edge && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Strong connectivity by forward and backward reachability from node 0
/// (Kosaraju's criterion for a single component).
pub fn is_strongly_connected(adj: &[Vec<bool>]) -> bool {
    if adj.is_empty() {
        return false;
    }
    reach_all(adj, true) && reach_all(adj, false)
}

/// Directed diameter along information flow, `None` if some pair is
/// unreachable.
pub fn diameter(adj: &[Vec<bool>]) -> Option<usize> {
    let n = adj.len();
    let mut best = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if adj[v][u] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if dist.contains(&usize::MAX) {
            return None;
        }
        best = best.max(*dist.iter().max()?);
    }
    Some(best)
}

impl CavNetwork {
    pub fn from_adjacency(adj: &[Vec<bool>], rule: &ConsensusRule) -> Result<Self> {
        let adjacency = with_self_loops(adj)?;
        if adjacency.is_empty() {
            return Err(Error::Dimension("network needs at least one CAV".into()));
        }
        let w = build_consensus_matrix(&adjacency, rule)?;
        let neighborhoods = adjacency
            .iter()
            .map(|r| (0..r.len()).filter(|&j| r[j]).collect())
            .collect();
        Ok(Self {
            n: adjacency.len(),
            adjacency,
            w,
            neighborhoods,
        })
    }

    /// Build from per-node out-neighbor lists (`j -> i` means `j ∈ N(i)`).
    pub fn from_out_neighbors(out: &[Vec<usize>], rule: &ConsensusRule) -> Result<Self> {
        let n = out.len();
        let mut adj = vec![vec![false; n]; n];
        for (j, list) in out.iter().enumerate() {
            for &i in list {
                if i >= n {
                    return Err(Error::Dimension(format!("node {j} links to unknown node {i}")));
                }
                adj[i][j] = true;
            }
        }
        Self::from_adjacency(&adj, rule)
    }

    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|j| (0..self.n).filter(|&i| i != j && self.adjacency[i][j]).collect())
            .collect()
    }

    /// Directed links, excluding self-loops.
    pub fn edge_count(&self) -> usize {
        self.neighborhoods.iter().map(|nb| nb.len() - 1).sum()
    }

    pub fn is_strongly_connected(&self) -> bool {
        is_strongly_connected(&self.adjacency)
    }
}

/// Directed Erdős–Rényi graph: each ordered pair `(i, j)`, `i ≠ j`, is a link
/// with probability `p`. With `require_strong` the draw is repeated until the
/// graph is strongly connected, at most [`ER_MAX_ATTEMPTS`] times.
pub fn erdos_renyi(
    n: usize,
    p: f64,
    rng: &mut RngStream,
    require_strong: bool,
    rule: &ConsensusRule,
) -> Result<CavNetwork> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("link probability {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::Dimension("network needs at least one CAV".into()));
    }
    let attempts = if require_strong { ER_MAX_ATTEMPTS } else { 1 };
    for _ in 0..attempts {
        let mut adj = vec![vec![false; n]; n];
        for (i, row) in adj.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = i == j || rng.bernoulli(p);
            }
        }
        if !require_strong || is_strongly_connected(&adj) {
            return CavNetwork::from_adjacency(&adj, rule);
        }
    }
    Err(Error::NotStronglyConnected { attempts })
}

/// `D_C` and `D̄_C` for selector outputs.
///
/// `D_C` is block-diagonal with blocks `Σ_{j∈N(i)} C_jᵀC_j`. `D̄_C` has block
/// `(i, j)` equal to `C_jᵀ` when `j ∈ N(i)`. The blocks carry the 0/1 link
/// pattern rather than `W_ij`, because the innovation sums neighbor
/// measurements without consensus weights.
#[derive(Clone, Debug)]
pub struct SharedObservation {
    pub nm: usize,
    pub selectors: Vec<Vec<usize>>,
    pub neighborhoods: Vec<Vec<usize>>,
    /// Diagonal of each `D_C` block: how many rows in `N(i)` select each
    /// coordinate.
    pub counts: Vec<Vec<f64>>,
}

pub fn build_shared_observation(
    selectors: &[Vec<usize>],
    neighborhoods: &[Vec<usize>],
    nm: usize,
) -> Result<SharedObservation> {
    if selectors.len() != neighborhoods.len() {
        return Err(Error::Dimension(format!(
            "{} selectors for {} neighborhoods",
            selectors.len(),
            neighborhoods.len()
        )));
    }
    let n = selectors.len();
    for (i, s) in selectors.iter().enumerate() {
        if let Some(c) = s.iter().find(|&&c| c >= nm) {
            return Err(Error::Dimension(format!("cav {i} selects coordinate {c} >= {nm}")));
        }
    }
    let mut counts = vec![vec![0.0; nm]; n];
    for (i, nb) in neighborhoods.iter().enumerate() {
        for &j in nb {
            if j >= n {
                return Err(Error::Dimension(format!("neighbor {j} of cav {i} out of range")));
            }
            for &c in &selectors[j] {
                counts[i][c] += 1.0;
            }
        }
    }
    Ok(SharedObservation {
        nm,
        selectors: selectors.to_vec(),
        neighborhoods: neighborhoods.to_vec(),
        counts,
    })
}

impl SharedObservation {
    pub fn n(&self) -> usize {
        self.selectors.len()
    }

    pub fn c_matrix(&self, j: usize) -> Matrix {
        let mut c = Matrix::zeros(self.selectors[j].len(), self.nm);
        for (r, &col) in self.selectors[j].iter().enumerate() {
            c[(r, col)] = 1.0;
        }
        c
    }

    pub fn block(&self, i: usize) -> Matrix {
        let mut d = Matrix::zeros(self.nm, self.nm);
        for &j in &self.neighborhoods[i] {
            let c = self.c_matrix(j);
            d += c.transpose() * c;
        }
        d
    }

    pub fn d_c(&self) -> Matrix {
        let (n, nm) = (self.n(), self.nm);
        let mut d = Matrix::zeros(n * nm, n * nm);
        for i in 0..n {
            d.view_mut((i * nm, i * nm), (nm, nm)).copy_from(&self.block(i));
        }
        d
    }

    /// Start of each CAV's rows in the stacked measurement vector.
    pub fn row_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for s in &self.selectors {
            off.push(off.last().unwrap() + s.len());
        }
        off
    }

    pub fn dbar(&self) -> Matrix {
        let (n, nm) = (self.n(), self.nm);
        let off = self.row_offsets();
        let mut d = Matrix::zeros(n * nm, off[n]);
        for i in 0..n {
            for &j in &self.neighborhoods[i] {
                for (r, &c) in self.selectors[j].iter().enumerate() {
                    d[(i * nm + c, off[j] + r)] = 1.0;
                }
            }
        }
        d
    }

    /// `D̄_C μ` for per-CAV measurement-space vectors, without forming `D̄_C`.
    pub fn apply_dbar(&self, mu: &[Vec<f64>]) -> Vec<Vector> {
        (0..self.n())
            .map(|i| {
                let mut out = Vector::zeros(self.nm);
                for &j in &self.neighborhoods[i] {
                    for (r, &c) in self.selectors[j].iter().enumerate() {
                        out[c] += mu[j][r];
                    }
                }
                out
            })
            .collect()
    }

    /// Coordinates no CAV measures.
    pub fn unmeasured(&self) -> Vec<usize> {
        let mut seen = vec![false; self.nm];
        for s in &self.selectors {
            for &c in s {
                seen[c] = true;
            }
        }
        (0..self.nm).filter(|&c| !seen[c]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub observable: bool,
    pub rank: usize,
    pub dim: usize,
}

/// Rank of `[H; H F; H F²; …]`, stacked until the rank stops growing.
///
/// After each new block the stack is compressed to `Σ Vᵀ` from its SVD,
/// which preserves its singular values, so memory stays `O(dim²)`.
pub fn observability_rank(f: &Matrix, h: &Matrix) -> Result<usize> {
    let dim = f.nrows();
    if !f.is_square() || h.ncols() != dim {
        return Err(Error::Dimension(format!(
            "pair ({}x{}, {}x{})",
            f.nrows(),
            f.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let mut block = h.clone();
    let mut stack = h.clone();
    let mut prev = usize::MAX;
    for _ in 0..=dim {
        let svd = stack.clone().svd(false, true);
        let sigma = &svd.singular_values;
        let smax = sigma.iter().copied().fold(0.0, f64::max);
        let tol = smax * dim as f64 * 1e-12;
        let rank = sigma.iter().filter(|&&s| s > tol).count();
        if rank == dim || rank == prev {
            return Ok(rank);
        }
        prev = rank;
        let vt = svd.v_t.expect("requested");
        let compressed = Matrix::from_diagonal(sigma) * vt;
        block = &block * f;
        let mut next = Matrix::zeros(compressed.nrows() + block.nrows(), dim);
        next.rows_mut(0, compressed.nrows()).copy_from(&compressed);
        next.rows_mut(compressed.nrows(), block.nrows()).copy_from(&block);
        stack = next;
    }
    Ok(prev)
}

/// Observability of `(W ⊗ A, D_C)` on the dense Kronecker pair.
pub fn check_distributed_observability(
    w: &Matrix,
    a: &Matrix,
    d_c: &Matrix,
) -> Result<ObservabilityReport> {
    let f = kronecker(w, a);
    if d_c.shape() != f.shape() {
        return Err(Error::Dimension(format!(
            "D_C is {}x{}, W⊗A is {}x{}",
            d_c.nrows(),
            d_c.ncols(),
            f.nrows(),
            f.ncols()
        )));
    }
    let rank = observability_rank(&f, d_c)?;
    Ok(ObservabilityReport {
        observable: rank == f.nrows(),
        rank,
        dim: f.nrows(),
    })
}

/// Per-HDV subsystem of `(W ⊗ A, D_C)` when `A = I_N ⊗ Ã` and `D_C` is
/// diagonal: the pair is permutation-similar to a direct sum over HDVs of
/// `(W ⊗ Ã, diag_i D_i[h])`, ordered CAV-major.
pub fn hdv_subsystem(w: &Matrix, block: &Matrix, counts: &[Vec<f64>], h: usize) -> (Matrix, Vector) {
    let m = block.nrows();
    let f = kronecker(w, block);
    let n = w.nrows();
    let d = Vector::from_fn(n * m, |r, _| counts[r / m][h * m + r % m]);
    (f, d)
}

/// Same certificate as [`check_distributed_observability`], computed per HDV.
pub fn check_observability_decomposed(
    w: &Matrix,
    block: &Matrix,
    shared: &SharedObservation,
) -> Result<ObservabilityReport> {
    let m = block.nrows();
    if !shared.nm.is_multiple_of(m) || shared.n() != w.nrows() {
        return Err(Error::Dimension("shared observation does not match the model".into()));
    }
    let n_hdv = shared.nm / m;
    let mut rank = 0;
    for h in 0..n_hdv {
        let (f, d) = hdv_subsystem(w, block, &shared.counts, h);
        rank += observability_rank(&f, &Matrix::from_diagonal(&d))?;
    }
    let dim = w.nrows() * shared.nm;
    Ok(ObservabilityReport {
        observable: rank == dim,
        rank,
        dim,
    })
}

/// Dense route up to `dense_limit` states, per-HDV route above it.
pub fn check_network_observability(
    network: &CavNetwork,
    block: &Matrix,
    shared: &SharedObservation,
    dense_limit: usize,
) -> Result<ObservabilityReport> {
    let dim = network.n * shared.nm;
    if dim <= dense_limit {
        let n_hdv = shared.nm / block.nrows();
        let a = kronecker(&Matrix::identity(n_hdv, n_hdv), block);
        let d = shared.d_c();
        debug_assert!(is_diagonal(&d));
        check_distributed_observability(&network.w, &a, &d)
    } else {
        check_observability_decomposed(&network.w, block, shared)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ncv_block;

    fn ring(n: usize) -> Vec<Vec<bool>> {
        let mut a = vec![vec![false; n]; n];
        for i in 0..n {
            a[i][(i + 1) % n] = true;
            a[i][(i + n - 1) % n] = true;
        }
        a
    }

    #[test]
    fn uniform_ring_weights() {
        let w = build_consensus_matrix(&ring(4), &ConsensusRule::Uniform).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if (i + 2) % 4 == j { 0.0 } else { 1.0 / 3.0 };
                assert_eq!(w[(i, j)], expect);
            }
        }
    }

    #[test]
    fn complete_graph_uniform() {
        let n = 5;
        let w = build_consensus_matrix(&vec![vec![true; n]; n], &ConsensusRule::Uniform).unwrap();
        assert!(w.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn metropolis_on_path() {
        let n = 5;
        let mut a = vec![vec![false; n]; n];
        for i in 0..n - 1 {
            a[i][i + 1] = true;
            a[i + 1][i] = true;
        }
        let w = build_consensus_matrix(&a, &ConsensusRule::MetropolisHastings).unwrap();
        for i in 0..n {
            assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert!((w.clone() - w.transpose()).amax() < 1e-15);
        // end node: degree 1, neighbor degree 2 → weight 1/3, self 2/3
        assert!((w[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn given_weights_checked() {
        let a = ring(3);
        let ok = vec![vec![0.5, 0.25, 0.25]; 3];
        assert!(build_consensus_matrix(&a, &ConsensusRule::Given(ok)).is_ok());
        let bad = vec![vec![0.5, 0.25, 0.0]; 3];
        assert!(build_consensus_matrix(&a, &ConsensusRule::Given(bad)).is_err());
    }

    #[test]
    fn connectivity_examples() {
        let mut cycle = vec![vec![false; 4]; 4];
        for i in 0..4 {
            cycle[(i + 1) % 4][i] = true;
        }
        assert!(is_strongly_connected(&cycle));
        assert_eq!(diameter(&with_self_loops(&cycle).unwrap()), Some(3));
        let mut pairs = vec![vec![false; 4]; 4];
        pairs[0][1] = true;
        pairs[1][0] = true;
        pairs[2][3] = true;
        pairs[3][2] = true;
        assert!(!is_strongly_connected(&pairs));
        assert_eq!(diameter(&pairs), None);
    }

    #[test]
    fn erdos_renyi_extremes() {
        let mut rng = RngStream::new(3);
        let net = erdos_renyi(6, 1.0, &mut rng, true, &ConsensusRule::Uniform).unwrap();
        assert_eq!(net.edge_count(), 30);
        let err = erdos_renyi(4, 0.0, &mut rng, true, &ConsensusRule::Uniform).unwrap_err();
        assert_eq!(err, Error::NotStronglyConnected { attempts: ER_MAX_ATTEMPTS });
    }

    #[test]
    fn out_neighbor_round_trip() {
        let net = CavNetwork::from_adjacency(&ring(5), &ConsensusRule::Uniform).unwrap();
        let again =
            CavNetwork::from_out_neighbors(&net.out_neighbors(), &ConsensusRule::Uniform).unwrap();
        assert_eq!(net.adjacency, again.adjacency);
        assert_eq!(net.edge_count(), 10);
    }

    #[test]
    fn shared_observation_single() {
        let s = build_shared_observation(&[vec![0]], &[vec![0]], 2).unwrap();
        let mut e = Matrix::zeros(2, 2);
        e[(0, 0)] = 1.0;
        assert_eq!(s.d_c(), e);
    }

    #[test]
    fn dbar_apply_matches_dense() {
        let net = CavNetwork::from_adjacency(&ring(4), &ConsensusRule::Uniform).unwrap();
        let sel: Vec<Vec<usize>> = (0..4).map(|i| vec![2 * i, 2 * i + 1, (2 * i + 2) % 8]).collect();
        let s = build_shared_observation(&sel, &net.neighborhoods, 8).unwrap();
        let mu: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..3).map(|r| (i * 3 + r) as f64 * 0.37 - 1.0).collect())
            .collect();
        let flat = Vector::from_iterator(12, mu.iter().flatten().copied());
        let dense = s.dbar() * flat;
        for (i, v) in s.apply_dbar(&mu).iter().enumerate() {
            assert!((dense.rows(i * 8, 8) - v).amax() < 1e-15);
        }
    }

    #[test]
    fn full_measurement_single_node_observable() {
        let a = ncv_block(0.1).unwrap();
        let r = check_distributed_observability(&Matrix::identity(1, 1), &a, &Matrix::identity(2, 2))
            .unwrap();
        assert_eq!(r, ObservabilityReport { observable: true, rank: 2, dim: 2 });
    }

    #[test]
    fn unmeasured_hdv_not_observable() {
        // two disconnected CAVs, both measure HDV 0 only
        let net = CavNetwork::from_adjacency(&vec![vec![false; 2]; 2], &ConsensusRule::Uniform)
            .unwrap();
        let s = build_shared_observation(&[vec![0, 1], vec![0, 1]], &net.neighborhoods, 4).unwrap();
        let a = kronecker(&Matrix::identity(2, 2), &ncv_block(0.1).unwrap());
        let r = check_distributed_observability(&net.w, &a, &s.d_c()).unwrap();
        assert!(!r.observable);
        assert_eq!(r.rank, 4);
        assert_eq!(s.unmeasured(), vec![2, 3]);
    }
}
