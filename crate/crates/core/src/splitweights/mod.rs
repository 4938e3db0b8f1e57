//! Circular split systems: enumeration, the split metric, non-negative least
//! squares weight fitting and NEXUS export.
//!
//! A circular split on an ordering of `n` taxa cuts the cycle in two places
//! and is stored as the arc `[p, q]` of ordering positions on the side away
//! from position 0. The trivial split isolating position 0 is the one
//! exception and is stored as `[0, 0]`.

mod nexus;
mod nnls;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrdist::DistanceMatrix;
use crate::neighbornet::CircularOrdering;

pub use nexus::{export_nexus, parse_nexus, NexusDocument};
pub use nnls::{kkt_violation, StructuredIncidence};

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("split arc [{p}, {q}] is not valid for {n} taxa")]
    InvalidArc { p: usize, q: usize, n: usize },
    #[error("ordering has {ordering} taxa but the distance matrix has {matrix}")]
    SizeMismatch { ordering: usize, matrix: usize },
    #[error("duplicate split [{p}, {q}]")]
    DuplicateSplit { p: usize, q: usize },
    #[error("negative or non-finite weight {weight} on split [{p}, {q}]")]
    InvalidWeight { p: usize, q: usize, weight: f64 },
    #[error("expected {expected} labels, got {found}")]
    LabelCount { expected: usize, found: usize },
    #[error("NNLS did not converge after {iterations} iterations (residual {residual})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("NEXUS parse error: {0}")]
    Nexus(String),
}

pub type Result<T> = std::result::Result<T, SplitError>;

/// One circular split, as an arc of ordering positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct CircularSplit {
    p: usize,
    q: usize,
}

impl CircularSplit {
    pub fn new(p: usize, q: usize, n: usize) -> Result<Self> {
        let valid = n >= 2 && q < n && ((p == 0 && q == 0) || (1 <= p && p <= q && q - p + 1 <= n - 1));
        if valid {
            Ok(Self { p, q })
        } else {
            Err(SplitError::InvalidArc { p, q, n })
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn arc_len(&self) -> usize {
        self.q - self.p + 1
    }

    pub fn is_trivial(&self, n: usize) -> bool {
        self.arc_len() == 1 || self.arc_len() == n - 1
    }

    /// The split that separates positions `i+1..=j` from the rest,
    /// `0 <= i < j <= n-1`.
    pub(crate) fn from_cut(i: usize, j: usize, n: usize) -> Self {
        debug_assert!(i < j && j < n);
        if i == 0 && j == n - 1 {
            Self { p: 0, q: 0 }
        } else {
            Self { p: i + 1, q: j }
        }
    }

    /// Inverse of [`CircularSplit::from_cut`].
    pub(crate) fn cut(&self, n: usize) -> (usize, usize) {
        if self.p == 0 {
            (0, n - 1)
        } else {
            (self.p - 1, self.q)
        }
    }

    /// Lexicographic index of the cut among all `n (n - 1) / 2` splits.
    pub(crate) fn index(&self, n: usize) -> usize {
        let (i, j) = self.cut(n);
        cut_index(i, j, n)
    }

    /// Ordering positions on the stored side of the split.
    pub fn positions(&self) -> std::ops::RangeInclusive<usize> {
        self.p..=self.q
    }

    /// Taxa on the stored side of the split.
    pub fn side(&self, ordering: &CircularOrdering) -> Vec<usize> {
        self.positions().map(|pos| ordering.at(pos)).collect()
    }

    /// Whether the split puts the taxa at positions `a` and `b` on different sides.
    pub fn separates(&self, a: usize, b: usize) -> bool {
        self.positions().contains(&a) != self.positions().contains(&b)
    }
}

impl From<CircularSplit> for [usize; 2] {
    fn from(s: CircularSplit) -> Self {
        [s.p, s.q]
    }
}

impl From<[usize; 2]> for CircularSplit {
    fn from([p, q]: [usize; 2]) -> Self {
        Self { p, q }
    }
}

pub(crate) fn cut_index(i: usize, j: usize, n: usize) -> usize {
    // rows 0..i contribute (n-1) + (n-2) + ... + (n-i) entries
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Every circular split of `n` taxa, in cut order.
pub fn enumerate_splits(n: usize) -> Vec<CircularSplit> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(CircularSplit::from_cut(i, j, n));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSplit {
    pub split: CircularSplit,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSplitSystem {
    ordering: CircularOrdering,
    splits: Vec<WeightedSplit>,
    fit_residual: f64,
}

impl WeightedSplitSystem {
    /// Validates arcs, weights and distinctness; splits are kept in cut order.
    pub fn new(ordering: CircularOrdering, splits: Vec<WeightedSplit>, fit_residual: f64) -> Result<Self> {
        let n = ordering.len();
        let mut splits = splits;
        for s in &splits {
            CircularSplit::new(s.split.p, s.split.q, n)?;
            if !s.weight.is_finite() || s.weight < 0.0 {
                return Err(SplitError::InvalidWeight {
                    p: s.split.p,
                    q: s.split.q,
                    weight: s.weight,
                });
            }
        }
        splits.sort_by_key(|s| s.split.index(n));
        for pair in splits.windows(2) {
            if pair[0].split == pair[1].split {
                return Err(SplitError::DuplicateSplit {
                    p: pair[0].split.p,
                    q: pair[0].split.q,
                });
            }
        }
        Ok(Self {
            ordering,
            splits,
            fit_residual: fit_residual.max(0.0),
        })
    }

    pub fn ordering(&self) -> &CircularOrdering {
        &self.ordering
    }

    pub fn splits(&self) -> &[WeightedSplit] {
        &self.splits
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn n_taxa(&self) -> usize {
        self.ordering.len()
    }

    /// Weight of every split in cut order, zero for splits not in the system.
    pub fn dense_weights(&self) -> Vec<f64> {
        let n = self.n_taxa();
        let mut w = vec![0.0; n * n.saturating_sub(1) / 2];
        for s in &self.splits {
            w[s.split.index(n)] = s.weight;
        }
        w
    }
}

/// Distance between taxa `i` and `j` = total weight of the splits separating them.
pub fn split_metric(system: &WeightedSplitSystem) -> DistanceMatrix {
    let n = system.n_taxa();
    let by_position = StructuredIncidence::new(n).apply(&system.dense_weights());
    let taxa = system.ordering.taxa();
    let mut d = ndarray::Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            d[[taxa[a], taxa[b]]] = by_position[a * n + b].max(0.0);
        }
    }
    DistanceMatrix::unlabeled(d).expect("split metric is a valid distance matrix")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Splits lighter than `drop_threshold * max(max weight, 1e-9)` are removed.
    pub drop_threshold: f64,
    /// Dual feasibility tolerance, relative to `max(1, max |A^T d|)`.
    pub tolerance: f64,
    /// Iteration cap; `None` means ten times the number of splits.
    pub max_iterations: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            drop_threshold: 1e-6,
            tolerance: 1e-10,
            max_iterations: None,
        }
    }
}

/// Least-squares non-negative weights for every circular split of `ordering`.
pub fn fit_weights(d: &DistanceMatrix, ordering: &CircularOrdering) -> Result<WeightedSplitSystem> {
    fit_weights_with(d, ordering, &FitOptions::default())
}

pub fn fit_weights_with(d: &DistanceMatrix, ordering: &CircularOrdering, options: &FitOptions) -> Result<WeightedSplitSystem> {
    let n = ordering.len();
    if d.len() != n {
        return Err(SplitError::SizeMismatch {
            ordering: n,
            matrix: d.len(),
        });
    }
    if n < 2 {
        return WeightedSplitSystem::new(ordering.clone(), Vec::new(), 0.0);
    }
    let target = position_distances(d, ordering);
    let op = StructuredIncidence::new(n);
    let weights = nnls::solve(&op, &target, options)?;

    let max_w = weights.iter().copied().fold(0.0, f64::max);
    let cutoff = options.drop_threshold * max_w.max(1e-9);
    let splits: Vec<WeightedSplit> = enumerate_splits(n)
        .into_iter()
        .zip(&weights)
        .filter(|&(_, &w)| w > 0.0 && w >= cutoff)
        .map(|(split, &weight)| WeightedSplit { split, weight })
        .collect();

    let mut kept = vec![0.0; weights.len()];
    for s in &splits {
        kept[s.split.index(n)] = s.weight;
    }
    let residual = rms_residual(&op, &kept, &target);
    WeightedSplitSystem::new(ordering.clone(), splits, residual)
}

/// `out[a * n + b]` = distance between the taxa at positions `a` and `b`.
pub(crate) fn position_distances(d: &DistanceMatrix, ordering: &CircularOrdering) -> Vec<f64> {
    let n = ordering.len();
    let taxa = ordering.taxa();
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = d.get(taxa[a], taxa[b]);
        }
    }
    out
}

/// Root-mean-square of `A w - d` over the `n (n - 1) / 2` taxon pairs.
pub(crate) fn rms_residual(op: &StructuredIncidence, w: &[f64], target: &[f64]) -> f64 {
    let n = op.n_taxa();
    let fitted = op.apply(w);
    let mut sum = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let r = fitted[a * n + b] - target[a * n + b];
            sum += r * r;
        }
    }
    let pairs = (n * (n - 1) / 2).max(1);
    (sum / pairs as f64).sqrt()
}
