#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use corrnet::clustering::{delineate_auto, pair_clusters, ClusterAssignment, ClusterPairing};
use corrnet::corrdist::{correlations, to_distance, DistanceMatrix};
use corrnet::marketdata::{
    generate_synthetic, load_metadata, period_total_return, trading_days, weekly_returns, FactorSpec, Industry, Metadata,
    Regime, StudyPeriod,
};
use corrnet::neighbornet::{circular_ordering, CircularOrdering};
use corrnet::portfolio::SelectionUniverse;
use corrnet::splitweights::fit_weights;
use ndarray::Array2;
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn metadata() -> Metadata {
    load_metadata(File::open(data_dir().join("metadata.csv")).unwrap()).unwrap()
}

/// Leaf-to-leaf path lengths of a random binary tree and the leaf set below
/// every edge.
pub struct RandomTree {
    pub d: DistanceMatrix,
    pub splits: Vec<Vec<usize>>,
}

pub fn random_tree(n: usize, rng: &mut impl Rng) -> RandomTree {
    let mut masks: Vec<u64> = (0..n).map(|i| 1u64 << i).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut edges: Vec<(u64, f64)> = Vec::new();
    while active.len() > 1 {
        let a = active.swap_remove(rng.random_range(0..active.len()));
        let b = active.swap_remove(rng.random_range(0..active.len()));
        edges.push((masks[a], rng.random_range(0.1..2.0)));
        edges.push((masks[b], rng.random_range(0.1..2.0)));
        masks.push(masks[a] | masks[b]);
        active.push(masks.len() - 1);
    }
    let d = Array2::from_shape_fn((n, n), |(i, j)| {
        edges
            .iter()
            .filter(|(m, _)| (m >> i & 1) != (m >> j & 1))
            .map(|(_, w)| w)
            .sum()
    });
    let splits = edges
        .iter()
        .map(|(m, _)| (0..n).filter(|&i| m >> i & 1 == 1).collect())
        .collect();
    RandomTree {
        d: DistanceMatrix::unlabeled(d).unwrap(),
        splits,
    }
}

/// The bundled period-one clusters laid out on a cycle cluster by cluster,
/// rotated so that cluster 1 starts at position 1.
pub struct Period1 {
    pub tickers: Vec<String>,
    pub industries: Vec<Industry>,
    pub ordering: CircularOrdering,
    pub assignment: ClusterAssignment,
    pub listed: Vec<(String, usize)>,
}

pub fn period1() -> Period1 {
    let meta = metadata();
    let tickers: Vec<String> = meta.rows().iter().map(|r| r.ticker.clone()).collect();
    let industries = meta.rows().iter().map(|r| r.industry.clone()).collect();
    let mut reader = csv::Reader::from_path(data_dir().join("period1_clusters.csv")).unwrap();
    let listed: Vec<(String, usize)> = reader.deserialize().map(|r| r.unwrap()).collect();
    let index = |t: &str| tickers.iter().position(|x| x == t).unwrap();
    let mut taxa: Vec<usize> = listed.iter().map(|(t, _)| index(t)).collect();
    taxa.rotate_right(1);
    let ordering = CircularOrdering::new(taxa).unwrap();
    let assignment =
        ClusterAssignment::read_csv(File::open(data_dir().join("period1_clusters.csv")).unwrap(), &ordering, &tickers)
            .unwrap();
    Period1 {
        tickers,
        industries,
        ordering,
        assignment,
        listed,
    }
}

/// Stocks `S000..` with industries dealt round-robin, cut into
/// `n_clusters` contiguous blocks on the identity cycle and paired.
pub fn block_universe(n: usize, n_clusters: usize, rng: &mut impl Rng) -> SelectionUniverse {
    let tickers = (0..n).map(|i| format!("S{i:03}")).collect();
    let industries = (0..n).map(|i| Industry::CORE[i % 5].clone()).collect();
    let returns = (0..n).map(|_| rng.random_range(-0.4..0.6)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i * n_clusters / n).collect();
    let assignment = ClusterAssignment::from_membership(&CircularOrdering::identity(n), &labels).unwrap();
    let pairing = pair_clusters(&assignment);
    SelectionUniverse::new(tickers, industries, returns)
        .unwrap()
        .with_clusters(&assignment, &pairing)
        .unwrap()
}

pub struct SyntheticStudy {
    pub universe: SelectionUniverse,
    pub assignment: ClusterAssignment,
    pub pairing: ClusterPairing,
}

/// Two years of synthetic prices for the bundled tickers: a calm first year
/// used to estimate clusters and a volatile, falling second year whose total
/// returns feed the simulation.
pub fn two_regime_study(seed: u64) -> SyntheticStudy {
    let meta = metadata();
    let mut spec = FactorSpec::from_metadata(&meta, 8, 1.0, 0.4);
    spec.regimes = vec![
        Regime { start_week: 0, drift: 0.0004, vol_scale: 1.0 },
        Regime { start_week: 52, drift: -0.0003, vol_scale: 1.6 },
    ];
    let prices = generate_synthetic(meta.len(), 104, &spec, seed).unwrap();
    let days = trading_days(spec.start, 104 * 5);
    let estimation = StudyPeriod::new("estimation", days[0], days[259]).unwrap();
    let evaluation = StudyPeriod::new("evaluation", days[259], days[519]).unwrap();

    let returns = weekly_returns(&prices, &estimation).unwrap();
    let d = to_distance(&correlations(&returns).unwrap());
    let (ordering, _) = circular_ordering(&d);
    let system = fit_weights(&d, &ordering).unwrap();
    let assignment = delineate_auto(&system, 8, 5).unwrap();
    let pairing = pair_clusters(&assignment);

    let tickers = prices.iter().map(|s| s.ticker().to_string()).collect();
    let industries = prices.iter().map(|s| s.industry().clone()).collect();
    let period_returns = prices.iter().map(|s| period_total_return(s, &evaluation).unwrap()).collect();
    let universe = SelectionUniverse::new(tickers, industries, period_returns)
        .unwrap()
        .with_clusters(&assignment, &pairing)
        .unwrap();
    SyntheticStudy {
        universe,
        assignment,
        pairing,
    }
}
