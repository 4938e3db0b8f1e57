//! Correlation clusters as contiguous arcs of a circular ordering.
//!
//! A cut at position `b` falls between ordering positions `b` and `b + 1`
//! (mod n). With cuts `b_0 < b_1 < ... < b_{k-1}`, cluster 1 covers positions
//! `b_0 + 1 ..= b_1`, cluster 2 the next arc, and cluster `k` wraps around
//! from `b_{k-1} + 1` through position `b_0`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighbornet::CircularOrdering;
use crate::splitweights::{split_metric, WeightedSplitSystem};

/// Relative tolerance under which two objective values count as equal.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("at least one boundary is required")]
    NoBoundaries,
    #[error("boundary {boundary} is out of range for {n} taxa")]
    OutOfRange { boundary: usize, n: usize },
    #[error("boundaries produce an empty arc at cut {boundary}")]
    EmptyArc { boundary: usize },
    #[error("cannot cut {n} taxa into {k} arcs of at least {min_size}")]
    Infeasible { k: usize, min_size: usize, n: usize },
    #[error("cluster {label} is not a contiguous arc of the ordering")]
    NotContiguous { label: String },
    #[error("expected {expected} taxa, got {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("ticker {0} is listed more than once")]
    DuplicateTicker(String),
    #[error("cluster {0} does not exist")]
    UnknownCluster(usize),
    #[error("cluster {0} is paired with itself")]
    SelfPaired(usize),
    #[error("subset must name at least one taxon")]
    EmptySubset,
    #[error("taxon {0} is not in the ordering")]
    UnknownTaxon(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// A partition of the taxa into `k` contiguous arcs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AssignmentRepr")]
pub struct ClusterAssignment {
    ordering: CircularOrdering,
    boundaries: Vec<usize>,
    labels: Vec<usize>,
}

#[derive(Deserialize)]
struct AssignmentRepr {
    ordering: CircularOrdering,
    boundaries: Vec<usize>,
    labels: Option<Vec<usize>>,
}

impl TryFrom<AssignmentRepr> for ClusterAssignment {
    type Error = ClusterError;

    fn try_from(repr: AssignmentRepr) -> Result<Self> {
        let assignment = delineate_manual(&repr.ordering, &repr.boundaries)?;
        if let Some(labels) = repr.labels {
            if labels != assignment.labels {
                return Err(ClusterError::NotContiguous {
                    label: "labels disagree with boundaries".into(),
                });
            }
        }
        Ok(assignment)
    }
}

impl ClusterAssignment {
    pub fn ordering(&self) -> &CircularOrdering {
        &self.ordering
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Cluster id (1-based) of every taxon.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.boundaries.len()
    }

    pub fn n_taxa(&self) -> usize {
        self.ordering.len()
    }

    /// `(first position, length)` of each cluster's arc, indexed by id - 1.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        let n = self.n_taxa();
        let k = self.k();
        (0..k)
            .map(|c| {
                let start = (self.boundaries[c] + 1) % n;
                let end = if c + 1 < k { self.boundaries[c + 1] } else { self.boundaries[0] + n };
                let len = end - self.boundaries[c];
                (start, len)
            })
            .collect()
    }

    /// Taxa of each cluster in ordering order, indexed by id - 1.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let n = self.n_taxa();
        self.arcs()
            .into_iter()
            .map(|(start, len)| (0..len).map(|o| self.ordering.at((start + o) % n)).collect())
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.arcs().into_iter().map(|(_, len)| len).collect()
    }

    /// Builds the assignment whose clusters are the given groups of taxa.
    /// `labels[t]` is any group key for taxon `t`; the result is numbered by
    /// the arc rule, not by the keys. A single group is cut after the last
    /// ordering position.
    pub fn from_membership<K: Ord + Clone + std::fmt::Display>(ordering: &CircularOrdering, labels: &[K]) -> Result<Self> {
        let n = ordering.len();
        if labels.len() != n {
            return Err(ClusterError::SizeMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if n == 0 {
            return Err(ClusterError::NoBoundaries);
        }
        let key_at = |pos: usize| &labels[ordering.at(pos)];
        let boundaries: Vec<usize> = (0..n).filter(|&b| key_at(b) != key_at((b + 1) % n)).collect();
        let boundaries = if boundaries.is_empty() { vec![n - 1] } else { boundaries };
        let assignment = delineate_manual(ordering, &boundaries)?;

        let mut seen: BTreeMap<&K, usize> = BTreeMap::new();
        for cluster in assignment.clusters() {
            let key = &labels[cluster[0]];
            if seen.insert(key, cluster.len()).is_some() {
                return Err(ClusterError::NotContiguous { label: key.to_string() });
            }
        }
        Ok(assignment)
    }

    /// Reads `ticker,cluster` rows; `tickers[t]` names taxon `t`.
    pub fn read_csv<R: Read>(source: R, ordering: &CircularOrdering, tickers: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut labels: Vec<Option<String>> = vec![None; tickers.len()];
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        for record in reader.deserialize::<MembershipRow>() {
            let row = record?;
            let &t = index
                .get(row.ticker.as_str())
                .ok_or_else(|| ClusterError::UnknownTicker(row.ticker.clone()))?;
            if labels[t].replace(row.cluster).is_some() {
                return Err(ClusterError::DuplicateTicker(row.ticker));
            }
        }
        let found = labels.iter().filter(|l| l.is_some()).count();
        let labels: Vec<String> = labels.into_iter().flatten().collect();
        if found != tickers.len() {
            return Err(ClusterError::SizeMismatch {
                expected: tickers.len(),
                found,
            });
        }
        Self::from_membership(ordering, &labels)
    }

    /// Writes `ticker,cluster` rows in taxon order.
    pub fn write_csv<W: Write>(&self, sink: W, tickers: &[String]) -> Result<()> {
        if tickers.len() != self.n_taxa() {
            return Err(ClusterError::SizeMismatch {
                expected: self.n_taxa(),
                found: tickers.len(),
            });
        }
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["ticker", "cluster"])?;
        for (ticker, label) in tickers.iter().zip(&self.labels) {
            writer.write_record([ticker.as_str(), &label.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct MembershipRow {
    ticker: String,
    cluster: String,
}

/// Assignment from analyst-chosen cut positions. Duplicate cuts would leave
/// an empty arc and are rejected.
pub fn delineate_manual(ordering: &CircularOrdering, boundaries: &[usize]) -> Result<ClusterAssignment> {
    let n = ordering.len();
    if boundaries.is_empty() {
        return Err(ClusterError::NoBoundaries);
    }
    let mut cuts = boundaries.to_vec();
    cuts.sort_unstable();
    for &b in &cuts {
        if b >= n {
            return Err(ClusterError::OutOfRange { boundary: b, n });
        }
    }
    if let Some(w) = cuts.windows(2).find(|w| w[0] == w[1]) {
        return Err(ClusterError::EmptyArc { boundary: w[0] });
    }
    let mut labels = vec![0; n];
    let mut assignment = ClusterAssignment {
        ordering: ordering.clone(),
        boundaries: cuts,
        labels: Vec::new(),
    };
    for (c, (start, len)) in assignment.arcs().into_iter().enumerate() {
        for o in 0..len {
            labels[ordering.at((start + o) % n)] = c + 1;
        }
    }
    assignment.labels = labels;
    Ok(assignment)
}

/// Distance between neighbouring taxa on the ordering under the fitted split
/// metric: `gaps[b]` sits at cut `b`, between positions `b` and `b + 1`.
pub fn adjacent_gaps(system: &WeightedSplitSystem) -> Vec<f64> {
    let d = split_metric(system);
    let o = system.ordering();
    (0..o.len()).map(|b| d.get(o.at(b), o.at(b + 1))).collect()
}

/// Cuts the ordering into `k` arcs of at least `min_size` taxa, maximising
/// the total gap at the cuts. Among equal optima the lexicographically
/// smallest cut list wins.
pub fn delineate_auto(system: &WeightedSplitSystem, k: usize, min_size: usize) -> Result<ClusterAssignment> {
    let gaps = adjacent_gaps(system);
    let cuts = best_cuts(&gaps, k, min_size)?;
    delineate_manual(system.ordering(), &cuts)
}

/// Exact cyclic optimisation behind [`delineate_auto`].
pub fn best_cuts(gaps: &[f64], k: usize, min_size: usize) -> Result<Vec<usize>> {
    let n = gaps.len();
    let min_size = min_size.max(1);
    if k == 0 || k * min_size > n {
        return Err(ClusterError::Infeasible { k, min_size, n });
    }
    let scale = gaps.iter().fold(1.0_f64, |m, g| m.max(g.abs())) * k as f64;
    let tol = TIE_EPS * scale;
    let neg = f64::NEG_INFINITY;

    let mut best: Option<(f64, Vec<usize>)> = None;
    for c0 in 0..n {
        // value[i][p]: best gap total of cuts i..k-1 given cut i at position p
        let mut value = vec![vec![neg; n]; k];
        for p in (c0 + 1)..n {
            if k >= 2 && n + c0 - p >= min_size {
                value[k - 1][p] = gaps[p];
            }
        }
        for i in (1..k.saturating_sub(1)).rev() {
            let mut suffix = neg;
            for p in (c0 + 1..n).rev() {
                if p + min_size < n {
                    suffix = suffix.max(value[i + 1][p + min_size]);
                }
                if suffix > neg {
                    value[i][p] = gaps[p] + suffix;
                }
            }
        }
        let mut cuts = vec![c0];
        let mut total = gaps[c0];
        if k >= 2 {
            let mut prev = c0;
            for i in 1..k {
                let lo = prev + min_size;
                let remaining = (lo..n).map(|p| value[i][p]).fold(neg, f64::max);
                if remaining == neg {
                    break;
                }
                let p = (lo..n)
                    .find(|&p| value[i][p] >= remaining - tol)
                    .expect("maximum is attained");
                if i == 1 {
                    total += remaining;
                }
                cuts.push(p);
                prev = p;
            }
            if cuts.len() != k {
                continue;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| total > *b + tol) {
            best = Some((total, cuts));
        }
    }
    best.map(|(_, cuts)| cuts)
        .ok_or(ClusterError::Infeasible { k, min_size, n })
}

/// Directed map from each cluster to the cluster opposite it on the cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPairing {
    /// `pair_of[c - 1]` is the partner of cluster `c`.
    pair_of: Vec<usize>,
}

impl ClusterPairing {
    pub fn new(pair_of: Vec<usize>) -> Result<Self> {
        let k = pair_of.len();
        for (c, &p) in pair_of.iter().enumerate() {
            if p == 0 || p > k {
                return Err(ClusterError::UnknownCluster(p));
            }
            if k >= 2 && p == c + 1 {
                return Err(ClusterError::SelfPaired(p));
            }
        }
        Ok(Self { pair_of })
    }

    pub fn pair_of(&self, cluster: usize) -> usize {
        self.pair_of[cluster - 1]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.pair_of
    }

    pub fn len(&self) -> usize {
        self.pair_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_of.is_empty()
    }
}

/// Centre of each arc (mean ordering position, unwrapped from the arc's start).
pub fn arc_centers(assignment: &ClusterAssignment) -> Vec<f64> {
    let n = assignment.n_taxa() as f64;
    assignment
        .arcs()
        .into_iter()
        .map(|(start, len)| (start as f64 + (len as f64 - 1.0) / 2.0) % n)
        .collect()
}

/// Pairs every cluster with the cluster most distant from it: the one the
/// most cluster steps away around the cycle. With an odd count two clusters
/// tie, and the one whose arc centre lies nearest the point diametrically
/// opposite this cluster's centre wins. Remaining ties go to the lower id.
pub fn pair_clusters(assignment: &ClusterAssignment) -> ClusterPairing {
    let k = assignment.k();
    if k < 2 {
        return ClusterPairing { pair_of: vec![1; k] };
    }
    let n = assignment.n_taxa() as f64;
    let centers = arc_centers(assignment);
    let circular = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(n);
        d.min(n - d)
    };
    let steps = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(k - d)
    };
    let pair_of = (0..k)
        .map(|c| {
            let antipode = (centers[c] + n / 2.0) % n;
            let farthest = (0..k).map(|o| steps(c, o)).max().expect("k >= 2");
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for o in (0..k).filter(|&o| steps(c, o) == farthest) {
                let d = circular(centers[o], antipode);
                if d < best_d - 1e-9 {
                    best_d = d;
                    best = Some(o + 1);
                }
            }
            best.expect("k >= 2")
        })
        .collect();
    ClusterPairing { pair_of }
}

/// Binomial coefficient, exact. Zero when `choose > size`; saturates at
/// `u128::MAX` for results beyond that range.
pub fn combination_count(size: u64, choose: u64) -> u128 {
    if choose > size {
        return 0;
    }
    let choose = choose.min(size - choose);
    let mut acc: u128 = 1;
    for i in 0..choose {
        // acc * (size - i) is divisible by (i + 1) at every step
        let numer = u128::from(size - i);
        let denom = u128::from(i + 1);
        let g = gcd(acc, denom);
        let (a, d) = (acc / g, denom / g);
        let Some(v) = a.checked_mul(numer / d) else {
            return u128::MAX;
        };
        acc = v;
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// How a set of taxa sits on a (later) circular ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContiguityReport {
    /// Maximal runs `(first position, last position)` covering the subset,
    /// in position order; the last may wrap past position `n - 1`.
    pub arcs: Vec<(usize, usize)>,
    pub n_arcs: usize,
    /// `1 / n_arcs`.
    pub score: f64,
}

/// Minimal arcs of `later` covering `subset`. `reference` is the assignment
/// the subset was drawn from and must cover the same taxa.
pub fn track_membership(reference: &ClusterAssignment, later: &CircularOrdering, subset: &[usize]) -> Result<ContiguityReport> {
    if reference.n_taxa() != later.len() {
        return Err(ClusterError::SizeMismatch {
            expected: reference.n_taxa(),
            found: later.len(),
        });
    }
    contiguity(later, subset)
}

/// [`track_membership`] for the members of one reference cluster.
pub fn track_cluster(reference: &ClusterAssignment, cluster: usize, later: &CircularOrdering) -> Result<ContiguityReport> {
    let members = reference
        .clusters()
        .get(cluster.wrapping_sub(1))
        .cloned()
        .ok_or(ClusterError::UnknownCluster(cluster))?;
    track_membership(reference, later, &members)
}

fn contiguity(ordering: &CircularOrdering, subset: &[usize]) -> Result<ContiguityReport> {
    let n = ordering.len();
    if subset.is_empty() {
        return Err(ClusterError::EmptySubset);
    }
    let mut inside = vec![false; n];
    for &t in subset {
        *inside.get_mut(t).ok_or(ClusterError::UnknownTaxon(t))? = true;
    }
    let member = |pos: usize| inside[ordering.at(pos)];
    let arcs: Vec<(usize, usize)> = if (0..n).all(member) {
        vec![(0, n - 1)]
    } else {
        (0..n)
            .filter(|&p| member(p) && !member((p + n - 1) % n))
            .map(|start| {
                let mut end = start;
                while member((end + 1) % n) {
                    end = (end + 1) % n;
                }
                (start, end)
            })
            .collect()
    };
    let n_arcs = arcs.len();
    Ok(ContiguityReport {
        arcs,
        n_arcs,
        score: 1.0 / n_arcs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> CircularOrdering {
        CircularOrdering::identity(n)
    }

    #[test]
    fn manual_cuts_number_arcs_from_position_zero() {
        let a = delineate_manual(&identity(6), &[0, 3]).unwrap();
        assert_eq!(a.clusters(), vec![vec![1, 2, 3], vec![4, 5, 0]]);
        assert_eq!(a.labels(), &[2, 1, 1, 1, 2, 2]);
        let one = delineate_manual(&identity(6), &[2]).unwrap();
        assert_eq!(one.k(), 1);
        assert_eq!(one.clusters(), vec![vec![3, 4, 5, 0, 1, 2]]);
    }

    #[test]
    fn manual_cuts_are_validated() {
        assert!(matches!(delineate_manual(&identity(6), &[1, 1]), Err(ClusterError::EmptyArc { boundary: 1 })));
        assert!(matches!(delineate_manual(&identity(6), &[6]), Err(ClusterError::OutOfRange { .. })));
        assert!(matches!(delineate_manual(&identity(6), &[]), Err(ClusterError::NoBoundaries)));
        assert_eq!(delineate_manual(&identity(6), &[3, 0]).unwrap().boundaries(), &[0, 3]);
    }

    #[test]
    fn membership_round_trip() {
        let o = CircularOrdering::new(vec![0, 4, 2, 5, 1, 3]).unwrap();
        for cuts in [vec![0, 3], vec![1, 2, 5], vec![5], vec![0, 1, 2, 3, 4, 5]] {
            let a = delineate_manual(&o, &cuts).unwrap();
            let b = ClusterAssignment::from_membership(&o, a.labels()).unwrap();
            if cuts.len() > 1 {
                assert_eq!(a, b);
            } else {
                assert_eq!(b.boundaries(), &[5]);
            }
        }
        assert!(matches!(
            ClusterAssignment::from_membership(&identity(4), &[1, 2, 1, 2]),
            Err(ClusterError::NotContiguous { .. })
        ));
    }

    #[test]
    fn json_round_trip_validates() {
        let a = delineate_manual(&identity(5), &[1, 3]).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ClusterAssignment>(&json).unwrap(), a);
        assert!(serde_json::from_str::<ClusterAssignment>(r#"{"ordering":[0,1,2],"boundaries":[1,1]}"#).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tickers: Vec<String> = ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect();
        let a = delineate_manual(&identity(5), &[0, 2]).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf, &tickers).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "ticker,cluster\nA,2\nB,1\nC,1\nD,2\nE,2\n");
        let back = ClusterAssignment::read_csv(buf.as_slice(), &identity(5), &tickers).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn best_cuts_simple_cases() {
        assert_eq!(best_cuts(&[0.0, 5.0, 0.0, 0.0, 4.0, 0.0], 2, 1).unwrap(), vec![1, 4]);
        assert_eq!(best_cuts(&[1.0; 6], 2, 1).unwrap(), vec![0, 1]);
        assert_eq!(best_cuts(&[1.0; 6], 6, 1).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(best_cuts(&[0.0, 0.0, 3.0, 0.0], 1, 1).unwrap(), vec![2]);
        assert!(matches!(best_cuts(&[1.0; 6], 4, 2), Err(ClusterError::Infeasible { .. })));
        // arcs of exactly 3: (0, 3) ties (1, 4) and the smaller list wins
        assert_eq!(best_cuts(&[9.0, 8.0, 0.0, 0.0, 1.0, 0.0], 2, 3).unwrap(), vec![0, 3]);
    }

    #[test]
    fn pairing_even_and_two() {
        let a = delineate_manual(&identity(16), &[1, 3, 5, 7, 9, 11, 13, 15]).unwrap();
        assert_eq!(pair_clusters(&a).as_slice(), &[5, 6, 7, 8, 1, 2, 3, 4]);
        let two = delineate_manual(&identity(7), &[0, 3]).unwrap();
        assert_eq!(pair_clusters(&two).as_slice(), &[2, 1]);
    }

    #[test]
    fn binomials() {
        assert_eq!(combination_count(9, 2), 36);
        assert_eq!(combination_count(12, 5), 792);
        assert_eq!(combination_count(7, 0), 1);
        assert_eq!(combination_count(3, 4), 0);
    }

    #[test]
    fn contiguity_reports() {
        let o = identity(6);
        let a = delineate_manual(&o, &[5]).unwrap();
        let one = track_membership(&a, &o, &[5, 0, 1]).unwrap();
        assert_eq!(one.arcs, vec![(5, 1)]);
        assert_eq!(one.score, 1.0);
        let alt = track_membership(&a, &o, &[0, 2, 4]).unwrap();
        assert_eq!(alt.n_arcs, 3);
        assert!((alt.score - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(track_membership(&a, &o, &[0, 1, 2, 3, 4, 5]).unwrap().n_arcs, 1);
        assert!(matches!(track_membership(&a, &o, &[]), Err(ClusterError::EmptySubset)));
        assert!(matches!(track_membership(&a, &o, &[9]), Err(ClusterError::UnknownTaxon(9))));
    }
}
