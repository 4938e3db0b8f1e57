//! Neighbor-Net agglomeration of a distance matrix into a circular ordering.
//!
//! Clusters are chains of one or two active nodes. Each round picks the pair
//! of clusters minimising the Q-criterion on mean cluster distances, then
//! the pair of nodes (one from each) minimising the same criterion with the
//! two chosen clusters broken into singletons. Linking the nodes merges the
//! chains; any chain of three nodes `x-y-z` is reduced to two new nodes
//!
//! ```text
//! d(u, a) = 2/3 d(x, a) + 1/3 d(y, a)
//! d(v, a) = 1/3 d(y, a) + 2/3 d(z, a)
//! d(u, v) = 1/3 (d(x, y) + d(y, z) + d(x, z))
//! ```
//!
//! When at most three nodes or two clusters are left the chains are closed
//! into a cycle and the reductions are undone in reverse order.
//!
//! Ties are broken by the lowest node index everywhere.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrdist::DistanceMatrix;

/// Relative tolerance under which two criterion values are treated as tied.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NeighborNetError {
    #[error("ordering is not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("trace does not replay: {0}")]
    TraceMismatch(String),
}

/// A permutation of taxa read as a cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CircularOrdering {
    taxa: Vec<usize>,
}

impl CircularOrdering {
    pub fn new(taxa: Vec<usize>) -> Result<Self, NeighborNetError> {
        let n = taxa.len();
        let mut seen = vec![false; n];
        for &t in &taxa {
            if t >= n || std::mem::replace(&mut seen[t], true) {
                return Err(NeighborNetError::NotPermutation(n));
            }
        }
        Ok(Self { taxa })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            taxa: (0..n).collect(),
        }
    }

    pub fn taxa(&self) -> &[usize] {
        &self.taxa
    }

    pub fn len(&self) -> usize {
        self.taxa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taxa.is_empty()
    }

    /// Taxon at ordering position `pos` (mod n).
    pub fn at(&self, pos: usize) -> usize {
        self.taxa[pos % self.taxa.len()]
    }

    /// `positions()[taxon]` is the ordering position of `taxon`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.taxa.len()];
        for (p, &t) in self.taxa.iter().enumerate() {
            pos[t] = p;
        }
        pos
    }

    /// Rotation/reflection representative: starts at taxon 0 and continues
    /// towards the smaller of its two neighbours.
    pub fn canonicalize(&self) -> Self {
        let n = self.taxa.len();
        if n == 0 {
            return self.clone();
        }
        let start = self
            .taxa
            .iter()
            .position(|&t| t == 0)
            .expect("permutation contains 0");
        let mut taxa: Vec<usize> = (0..n).map(|k| self.taxa[(start + k) % n]).collect();
        if n > 2 && taxa[n - 1] < taxa[1] {
            taxa[1..].reverse();
        }
        Self { taxa }
    }

    /// True when `members` occupy a single contiguous arc of the cycle.
    /// The empty set and the full set count as contiguous.
    pub fn is_contiguous(&self, members: &[usize]) -> bool {
        let n = self.taxa.len();
        let mut inside = vec![false; n];
        for &t in members {
            inside[t] = true;
        }
        let runs = (0..n)
            .filter(|&p| inside[self.taxa[p]] && !inside[self.taxa[(p + n - 1) % n]])
            .count();
        runs <= 1
    }
}

impl TryFrom<Vec<usize>> for CircularOrdering {
    type Error = NeighborNetError;

    fn try_from(value: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CircularOrdering> for Vec<usize> {
    fn from(value: CircularOrdering) -> Self {
        value.taxa
    }
}

impl fmt::Display for CircularOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.taxa {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
            first = false;
        }
        Ok(())
    }
}

pub fn canonicalize(ordering: &CircularOrdering) -> CircularOrdering {
    ordering.canonicalize()
}

/// One step of the agglomeration. Node ids below `n` are taxa; reductions
/// allocate fresh ids from `n` upwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    ClustersSelected { first: Vec<usize>, second: Vec<usize> },
    NodesJoined { x: usize, y: usize },
    Reduced { x: usize, y: usize, z: usize, u: usize, v: usize },
    Closed { cycle: Vec<usize> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgglomerationTrace {
    pub n_taxa: usize,
    pub events: Vec<TraceEvent>,
}

impl AgglomerationTrace {
    /// Re-applies the recorded joins and closure to `d`, recomputing every
    /// reduction, and returns the canonical ordering they produce.
    pub fn replay(&self, d: &DistanceMatrix) -> Result<CircularOrdering, NeighborNetError> {
        let mismatch = |msg: String| NeighborNetError::TraceMismatch(msg);
        if d.len() != self.n_taxa {
            return Err(mismatch(format!(
                "trace has {} taxa, matrix has {}",
                self.n_taxa,
                d.len()
            )));
        }
        let mut state = Agglomerator::new(d);
        let mut expected_reductions = Vec::new();
        let mut closed = None;
        for event in &self.events {
            match event {
                TraceEvent::ClustersSelected { .. } => {}
                TraceEvent::NodesJoined { x, y } => {
                    let ci = state.cluster_of(*x).ok_or_else(|| mismatch(format!("node {x} is not active")))?;
                    let cj = state.cluster_of(*y).ok_or_else(|| mismatch(format!("node {y} is not active")))?;
                    if ci == cj {
                        return Err(mismatch(format!("nodes {x} and {y} share a cluster")));
                    }
                    state.join(ci, cj, *x, *y);
                }
                TraceEvent::Reduced { x, y, z, u, v } => expected_reductions.push([*x, *y, *z, *u, *v]),
                TraceEvent::Closed { cycle } => closed = Some(cycle.clone()),
            }
        }
        if state.reductions != expected_reductions {
            return Err(mismatch("reductions differ from the recorded ones".into()));
        }
        let cycle = closed.ok_or_else(|| mismatch("no closing event".into()))?;
        let mut active: Vec<usize> = state.clusters.iter().flatten().copied().collect();
        let mut sorted = cycle.clone();
        active.sort_unstable();
        sorted.sort_unstable();
        if active != sorted {
            return Err(mismatch("closing cycle does not cover the active nodes".into()));
        }
        Ok(state.expand(cycle))
    }
}

/// Neighbor-Net circular ordering of the taxa of `d`, in canonical form,
/// together with the agglomeration trace that produced it.
pub fn circular_ordering(d: &DistanceMatrix) -> (CircularOrdering, AgglomerationTrace) {
    let n = d.len();
    let mut trace = AgglomerationTrace {
        n_taxa: n,
        events: Vec::new(),
    };
    if n <= 3 {
        trace.events.push(TraceEvent::Closed {
            cycle: (0..n).collect(),
        });
        return (CircularOrdering::identity(n), trace);
    }

    let mut state = Agglomerator::new(d);
    while state.active_count() > 3 && state.clusters.len() > 2 {
        state.sort_clusters();
        let (ci, cj) = state.select_clusters();
        trace.events.push(TraceEvent::ClustersSelected {
            first: state.clusters[ci].clone(),
            second: state.clusters[cj].clone(),
        });
        let (x, y) = state.select_nodes(ci, cj);
        trace.events.push(TraceEvent::NodesJoined { x, y });
        let before = state.reductions.len();
        state.join(ci, cj, x, y);
        for &[x, y, z, u, v] in &state.reductions[before..] {
            trace.events.push(TraceEvent::Reduced { x, y, z, u, v });
        }
    }

    let cycle = state.close();
    trace.events.push(TraceEvent::Closed {
        cycle: cycle.clone(),
    });
    (state.expand(cycle), trace)
}

struct Agglomerator {
    n: usize,
    stride: usize,
    dist: Vec<f64>,
    clusters: Vec<Vec<usize>>,
    next_id: usize,
    /// `[x, y, z, u, v]` in the order they were applied.
    reductions: Vec<[usize; 5]>,
}

impl Agglomerator {
    fn new(d: &DistanceMatrix) -> Self {
        let n = d.len();
        // each reduction adds two nodes and removes one active node
        let stride = 3 * n;
        let mut dist = vec![0.0; stride * stride];
        for i in 0..n {
            for j in 0..n {
                dist[i * stride + j] = d.get(i, j);
            }
        }
        Self {
            n,
            stride,
            dist,
            clusters: (0..n).map(|i| vec![i]).collect(),
            next_id: n,
            reductions: Vec::new(),
        }
    }

    #[inline]
    fn d(&self, a: usize, b: usize) -> f64 {
        self.dist[a * self.stride + b]
    }

    fn set_d(&mut self, a: usize, b: usize, value: f64) {
        self.dist[a * self.stride + b] = value;
        self.dist[b * self.stride + a] = value;
    }

    fn active_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    fn cluster_of(&self, node: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&node))
    }

    fn sort_clusters(&mut self) {
        self.clusters.sort_by_key(|c| *c.iter().min().expect("clusters are non-empty"));
    }

    fn node_to_cluster(&self, x: usize, cluster: &[usize]) -> f64 {
        cluster.iter().map(|&a| self.d(x, a)).sum::<f64>() / cluster.len() as f64
    }

    fn cluster_distance(&self, a: &[usize], b: &[usize]) -> f64 {
        let total: f64 = a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).map(|(x, y)| self.d(x, y)).sum();
        total / (a.len() * b.len()) as f64
    }

    /// Pair of cluster indices `(i, j)`, `i < j`, minimising
    /// `(m - 2) D(Ci, Cj) - sum_k D(Ci, Ck) - sum_k D(Cj, Ck)`.
    fn select_clusters(&self) -> (usize, usize) {
        let m = self.clusters.len();
        let mut between = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = self.cluster_distance(&self.clusters[i], &self.clusters[j]);
                between[i * m + j] = v;
                between[j * m + i] = v;
            }
        }
        let sums: Vec<f64> = (0..m).map(|i| between[i * m..(i + 1) * m].iter().sum()).collect();

        let mut best = (0, 1);
        let mut best_q = f64::INFINITY;
        for i in 0..m {
            for j in (i + 1)..m {
                let q = (m as f64 - 2.0) * between[i * m + j] - sums[i] - sums[j];
                if strictly_less(q, best_q) {
                    best = (i, j);
                    best_q = q;
                }
            }
        }
        best
    }

    /// Nodes `x` in cluster `ci`, `y` in cluster `cj` minimising the
    /// Q-criterion over the other clusters plus the nodes of `ci` and `cj`
    /// as singletons.
    fn select_nodes(&self, ci: usize, cj: usize) -> (usize, usize) {
        let mut candidates: Vec<usize> = self.clusters[ci].iter().chain(&self.clusters[cj]).copied().collect();
        candidates.sort_unstable();
        let others: Vec<&Vec<usize>> = self
            .clusters
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != ci && k != cj)
            .map(|(_, c)| c)
            .collect();
        let m = (others.len() + candidates.len()) as f64;

        let spread = |x: usize| -> f64 {
            others.iter().map(|c| self.node_to_cluster(x, c)).sum::<f64>()
                + candidates.iter().map(|&a| self.d(x, a)).sum::<f64>()
        };
        let mut xs = self.clusters[ci].clone();
        let mut ys = self.clusters[cj].clone();
        xs.sort_unstable();
        ys.sort_unstable();
        let rx: Vec<f64> = xs.iter().map(|&x| spread(x)).collect();
        let ry: Vec<f64> = ys.iter().map(|&y| spread(y)).collect();

        let mut best = (xs[0], ys[0]);
        let mut best_q = f64::INFINITY;
        for (a, &x) in xs.iter().enumerate() {
            for (b, &y) in ys.iter().enumerate() {
                let q = (m - 2.0) * self.d(x, y) - rx[a] - ry[b];
                if strictly_less(q, best_q) {
                    best = (x, y);
                    best_q = q;
                }
            }
        }
        best
    }

    /// Links `x` (in cluster `ci`) to `y` (in cluster `cj`) and reduces the
    /// merged chain back to at most two nodes.
    fn join(&mut self, ci: usize, cj: usize, x: usize, y: usize) {
        let mut left = self.clusters[ci].clone();
        let mut right = self.clusters[cj].clone();
        if left.last() != Some(&x) {
            left.reverse();
        }
        if right.first() != Some(&y) {
            right.reverse();
        }
        let (hi, lo) = if ci > cj { (ci, cj) } else { (cj, ci) };
        self.clusters.remove(hi);
        self.clusters.remove(lo);

        let mut chain = left;
        chain.extend(right);
        if chain.len() == 4 {
            let (head, tail) = (self.d(chain[0], chain[1]), self.d(chain[2], chain[3]));
            if strictly_less(head, tail) || (!strictly_less(tail, head) && chain[3] < chain[0]) {
                chain.reverse();
            }
        }
        while chain.len() >= 3 {
            let (u, v) = self.reduce(chain[0], chain[1], chain[2], &chain[3..]);
            chain.splice(0..3, [u, v]);
        }
        self.clusters.push(chain);
    }

    fn reduce(&mut self, x: usize, y: usize, z: usize, rest_of_chain: &[usize]) -> (usize, usize) {
        let u = self.next_id;
        let v = self.next_id + 1;
        self.next_id += 2;

        let others: Vec<usize> = self.clusters.iter().flatten().chain(rest_of_chain).copied().collect();
        for a in others {
            let (dxa, dya, dza) = (self.d(x, a), self.d(y, a), self.d(z, a));
            self.set_d(u, a, 2.0 / 3.0 * dxa + 1.0 / 3.0 * dya);
            self.set_d(v, a, 1.0 / 3.0 * dya + 2.0 / 3.0 * dza);
        }
        let uv = (self.d(x, y) + self.d(y, z) + self.d(x, z)) / 3.0;
        self.set_d(u, v, uv);
        self.reductions.push([x, y, z, u, v]);
        (u, v)
    }

    /// Closes the remaining chains into one cycle of active nodes.
    fn close(&mut self) -> Vec<usize> {
        self.sort_clusters();
        if let [a, b] = self.clusters.as_slice() {
            if a.len() == 2 && b.len() == 2 {
                // a0 a1 b0 b1 versus a0 a1 b1 b0
                let straight = self.d(a[1], b[0]) + self.d(b[1], a[0]);
                let crossed = self.d(a[1], b[1]) + self.d(b[0], a[0]);
                return if strictly_less(crossed, straight) {
                    vec![a[0], a[1], b[1], b[0]]
                } else {
                    vec![a[0], a[1], b[0], b[1]]
                };
            }
        }
        self.clusters.iter().flatten().copied().collect()
    }

    /// Undoes the reductions in reverse and maps the cycle to taxa.
    fn expand(&self, mut cycle: Vec<usize>) -> CircularOrdering {
        for &[x, y, z, u, v] in self.reductions.iter().rev() {
            let len = cycle.len();
            let pu = cycle.iter().position(|&a| a == u).expect("reduced node in cycle");
            if cycle[(pu + 1) % len] == v {
                let pv = (pu + 1) % len;
                cycle[pu] = x;
                cycle[pv] = z;
                cycle.insert(pu + 1, y);
            } else {
                let pv = (pu + len - 1) % len;
                debug_assert_eq!(cycle[pv], v, "reduced pair must stay adjacent");
                cycle[pu] = x;
                cycle[pv] = z;
                cycle.insert(pu, y);
            }
        }
        debug_assert!(cycle.iter().all(|&t| t < self.n));
        CircularOrdering::new(cycle)
            .expect("expansion yields a permutation")
            .canonicalize()
    }
}

fn strictly_less(a: f64, b: f64) -> bool {
    if b == f64::INFINITY {
        return a < b;
    }
    let scale = a.abs().max(b.abs()).max(1.0);
    a < b - TIE_EPS * scale
}
