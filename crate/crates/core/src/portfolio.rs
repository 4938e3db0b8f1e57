//! Portfolio selection strategies and the Monte-Carlo simulation harness.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterAssignment, ClusterPairing};
use crate::inference::{anova_oneway, levene, Center, TestReport};
use crate::marketdata::Industry;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("the universe is empty")]
    EmptyUniverse,
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("duplicate ticker {0}")]
    DuplicateTicker(String),
    #[error("return of {ticker} is not finite")]
    NonFiniteReturn { ticker: String },
    #[error("portfolio size {k} is outside 1..={available}")]
    InvalidSize { k: usize, available: usize },
    #[error("strategy {0} needs at least 2 stocks per portfolio")]
    SizeTooSmall(Strategy),
    #[error("strategy {0} needs cluster assignments")]
    NoClusters(Strategy),
    #[error("pairing covers {got} clusters, assignment has {expected}")]
    PairingMismatch { expected: usize, got: usize },
    #[error("strategy {strategy} could not fill a portfolio of {k} after {retries} retries")]
    Infeasible { strategy: Strategy, k: usize, retries: usize },
    #[error("need at least 2 iterations, got {0}")]
    TooFewIterations(usize),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<PortfolioError>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PortfolioError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Industry,
    Cluster,
    IndustryCluster,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Industry,
        Strategy::Cluster,
        Strategy::IndustryCluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Industry => "industry",
            Strategy::Cluster => "cluster",
            Strategy::IndustryCluster => "industry_cluster",
        }
    }

    pub fn needs_clusters(self) -> bool {
        matches!(self, Strategy::Cluster | Strategy::IndustryCluster)
    }

    fn code(self) -> u64 {
        match self {
            Strategy::Random => 1,
            Strategy::Industry => 2,
            Strategy::Cluster => 3,
            Strategy::IndustryCluster => 4,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let folded: String = s.trim().chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        match folded.as_str() {
            "random" => Ok(Strategy::Random),
            "industry" => Ok(Strategy::Industry),
            "cluster" => Ok(Strategy::Cluster),
            "industrycluster" => Ok(Strategy::IndustryCluster),
            _ => Err(format!("unknown strategy '{s}'")),
        }
    }
}

/// How clusters are drawn for successive pairs within one portfolio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDraw {
    /// Without replacement until every cluster has been drawn, then with replacement.
    #[default]
    ExhaustThenReplace,
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub pair_draw: PairDraw,
    /// Failed draws tolerated per portfolio before giving up.
    pub max_retries: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            pair_draw: PairDraw::default(),
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ClusterIndex {
    /// Cluster id (1-based) of each stock.
    label: Vec<usize>,
    /// Stock indices of each cluster, indexed by id - 1.
    members: Vec<Vec<usize>>,
    /// Partner index (0-based) of each cluster.
    partner: Vec<usize>,
}

/// The stocks a portfolio may draw from, with their out-of-sample returns.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionUniverse {
    tickers: Vec<String>,
    industries: Vec<Industry>,
    returns: Vec<f64>,
    /// Stock indices of each industry group, in industry order.
    industry_groups: Vec<Vec<usize>>,
    industry_of: Vec<usize>,
    clusters: Option<ClusterIndex>,
}

impl SelectionUniverse {
    pub fn new(tickers: Vec<String>, industries: Vec<Industry>, returns: Vec<f64>) -> Result<Self> {
        let n = tickers.len();
        if n == 0 {
            return Err(PortfolioError::EmptyUniverse);
        }
        if industries.len() != n {
            return Err(PortfolioError::LengthMismatch { what: "industries", expected: n, got: industries.len() });
        }
        if returns.len() != n {
            return Err(PortfolioError::LengthMismatch { what: "returns", expected: n, got: returns.len() });
        }
        let mut seen = HashSet::new();
        for t in &tickers {
            if !seen.insert(t.as_str()) {
                return Err(PortfolioError::DuplicateTicker(t.clone()));
            }
        }
        if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
            return Err(PortfolioError::NonFiniteReturn { ticker: tickers[i].clone() });
        }
        let mut by_industry: BTreeMap<&Industry, Vec<usize>> = BTreeMap::new();
        for (i, ind) in industries.iter().enumerate() {
            by_industry.entry(ind).or_default().push(i);
        }
        let mut industry_of = vec![0; n];
        for (g, members) in by_industry.values().enumerate() {
            for &i in members {
                industry_of[i] = g;
            }
        }
        let industry_groups = by_industry.into_values().collect();
        Ok(Self {
            tickers,
            industries,
            returns,
            industry_groups,
            industry_of,
            clusters: None,
        })
    }

    /// Attaches clusters; taxon `t` of the assignment is stock `t`.
    pub fn with_clusters(mut self, assignment: &ClusterAssignment, pairing: &ClusterPairing) -> Result<Self> {
        if assignment.n_taxa() != self.len() {
            return Err(PortfolioError::LengthMismatch {
                what: "clustered taxa",
                expected: self.len(),
                got: assignment.n_taxa(),
            });
        }
        if pairing.len() != assignment.k() {
            return Err(PortfolioError::PairingMismatch { expected: assignment.k(), got: pairing.len() });
        }
        let members = assignment
            .clusters()
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        self.clusters = Some(ClusterIndex {
            label: assignment.labels().to_vec(),
            members,
            partner: (1..=assignment.k()).map(|c| pairing.pair_of(c) - 1).collect(),
        });
        Ok(self)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn industries(&self) -> &[Industry] {
        &self.industries
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    pub fn has_clusters(&self) -> bool {
        self.clusters.is_some()
    }

    pub fn n_industry_groups(&self) -> usize {
        self.industry_groups.len()
    }

    /// Cluster id (1-based) of stock `i`.
    pub fn cluster_of(&self, i: usize) -> Option<usize> {
        self.clusters.as_ref().map(|c| c.label[i])
    }

    /// Partner id (1-based) of cluster `c` (1-based).
    pub fn pair_of(&self, c: usize) -> Option<usize> {
        self.clusters.as_ref().map(|cl| cl.partner[c - 1] + 1)
    }

    pub fn n_clusters(&self) -> Option<usize> {
        self.clusters.as_ref().map(|c| c.members.len())
    }
}

/// One sampled portfolio. Members and pairs are indices into the universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub strategy: Strategy,
    pub members: Vec<usize>,
    /// `(stock from C, stock from pair_of[C])` for each drawn cluster pair.
    pub pairs: Vec<(usize, usize)>,
    /// Equal-weighted mean of the members' returns.
    pub period_return: f64,
}

impl Portfolio {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn tickers<'a>(&self, universe: &'a SelectionUniverse) -> Vec<&'a str> {
        self.members.iter().map(|&i| universe.tickers[i].as_str()).collect()
    }
}

/// Spreads `total` picks over `groups` groups. With `total <= groups`,
/// `total` distinct groups get one each; otherwise every group gets
/// `total / groups` and `total % groups` distinct groups get one more.
///
/// # Panics
/// If `groups` is zero.
pub fn allocate_counts<R: Rng + ?Sized>(total: usize, groups: usize, rng: &mut R) -> Vec<usize> {
    assert!(groups >= 1, "allocate_counts needs at least one group");
    let (base, extra) = if total <= groups { (0, total) } else { (total / groups, total % groups) };
    let mut counts = vec![base; groups];
    for g in sample(rng, groups, extra) {
        counts[g] += 1;
    }
    counts
}

/// `allocate_counts` respecting group capacities. Picks that overflow a
/// group are handed one at a time to a uniformly chosen group with room.
fn allocate_with_capacity<R: Rng + ?Sized>(total: usize, capacity: &[usize], rng: &mut R) -> Option<Vec<usize>> {
    if total > capacity.iter().sum() {
        return None;
    }
    let mut counts = allocate_counts(total, capacity.len(), rng);
    let mut overflow = 0;
    for (c, &cap) in counts.iter_mut().zip(capacity) {
        if *c > cap {
            overflow += *c - cap;
            *c = cap;
        }
    }
    while overflow > 0 {
        let room: Vec<usize> = (0..capacity.len()).filter(|&g| counts[g] < capacity[g]).collect();
        counts[room[rng.random_range(0..room.len())]] += 1;
        overflow -= 1;
    }
    Some(counts)
}

fn check_size(universe: &SelectionUniverse, k: usize) -> Result<()> {
    if k == 0 || k > universe.len() {
        return Err(PortfolioError::InvalidSize { k, available: universe.len() });
    }
    Ok(())
}

fn finish(universe: &SelectionUniverse, strategy: Strategy, members: Vec<usize>, pairs: Vec<(usize, usize)>) -> Portfolio {
    let period_return = members.iter().map(|&i| universe.returns[i]).sum::<f64>() / members.len() as f64;
    Portfolio {
        strategy,
        members,
        pairs,
        period_return,
    }
}

/// Uniform sample of `k` distinct stocks.
pub fn select_random<R: Rng + ?Sized>(universe: &SelectionUniverse, k: usize, rng: &mut R) -> Result<Portfolio> {
    check_size(universe, k)?;
    let members = sample(rng, universe.len(), k).into_vec();
    Ok(finish(universe, Strategy::Random, members, Vec::new()))
}

fn sample_groups<R: Rng + ?Sized>(groups: &[&[usize]], counts: &[usize], rng: &mut R, out: &mut Vec<usize>) {
    for (group, &count) in groups.iter().zip(counts) {
        for i in sample(rng, group.len(), count) {
            out.push(group[i]);
        }
    }
}

/// Allocates `k` over the industry groups, then samples uniformly inside each.
pub fn select_by_industry<R: Rng + ?Sized>(universe: &SelectionUniverse, k: usize, rng: &mut R) -> Result<Portfolio> {
    check_size(universe, k)?;
    let groups: Vec<&[usize]> = universe.industry_groups.iter().map(Vec::as_slice).collect();
    let capacity: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let counts = allocate_with_capacity(k, &capacity, rng).ok_or(PortfolioError::Infeasible {
        strategy: Strategy::Industry,
        k,
        retries: 0,
    })?;
    let mut members = Vec::with_capacity(k);
    sample_groups(&groups, &counts, rng, &mut members);
    Ok(finish(universe, Strategy::Industry, members, Vec::new()))
}

/// Draws cluster pairs and one stock from each side of a pair. Portfolios
/// larger than the cluster count are allocated over clusters instead.
pub fn select_by_cluster<R: Rng + ?Sized>(
    universe: &SelectionUniverse,
    k: usize,
    rng: &mut R,
    options: &SelectionOptions,
) -> Result<Portfolio> {
    select_clustered(universe, Strategy::Cluster, k, rng, options)
}

/// As [`select_by_cluster`], but the two stocks of each pair come from
/// different industries. Above the cluster count each cluster's share is
/// further spread over its industries.
pub fn select_by_industry_cluster<R: Rng + ?Sized>(
    universe: &SelectionUniverse,
    k: usize,
    rng: &mut R,
    options: &SelectionOptions,
) -> Result<Portfolio> {
    select_clustered(universe, Strategy::IndustryCluster, k, rng, options)
}

pub fn select<R: Rng + ?Sized>(
    universe: &SelectionUniverse,
    strategy: Strategy,
    k: usize,
    rng: &mut R,
    options: &SelectionOptions,
) -> Result<Portfolio> {
    match strategy {
        Strategy::Random => select_random(universe, k, rng),
        Strategy::Industry => select_by_industry(universe, k, rng),
        Strategy::Cluster | Strategy::IndustryCluster => select_clustered(universe, strategy, k, rng, options),
    }
}

fn select_clustered<R: Rng + ?Sized>(
    universe: &SelectionUniverse,
    strategy: Strategy,
    k: usize,
    rng: &mut R,
    options: &SelectionOptions,
) -> Result<Portfolio> {
    check_size(universe, k)?;
    let clusters = universe.clusters.as_ref().ok_or(PortfolioError::NoClusters(strategy))?;
    if k < 2 {
        return Err(PortfolioError::SizeTooSmall(strategy));
    }
    let infeasible = |retries| PortfolioError::Infeasible { strategy, k, retries };
    let n_clusters = clusters.members.len();

    if k > n_clusters {
        let capacity: Vec<usize> = clusters.members.iter().map(Vec::len).collect();
        let counts = allocate_with_capacity(k, &capacity, rng).ok_or_else(|| infeasible(0))?;
        let mut members = Vec::with_capacity(k);
        if strategy == Strategy::Cluster {
            let groups: Vec<&[usize]> = clusters.members.iter().map(Vec::as_slice).collect();
            sample_groups(&groups, &counts, rng, &mut members);
        } else {
            for (cluster, &count) in clusters.members.iter().zip(&counts) {
                let mut by_industry: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for &i in cluster {
                    by_industry.entry(universe.industry_of[i]).or_default().push(i);
                }
                let groups: Vec<&[usize]> = by_industry.values().map(Vec::as_slice).collect();
                let capacity: Vec<usize> = groups.iter().map(|g| g.len()).collect();
                let sub = allocate_with_capacity(count, &capacity, rng).ok_or_else(|| infeasible(0))?;
                sample_groups(&groups, &sub, rng, &mut members);
            }
        }
        return Ok(finish(universe, strategy, members, Vec::new()));
    }

    let mut chosen = vec![false; universe.len()];
    let mut members = Vec::with_capacity(k);
    let mut pairs = Vec::with_capacity(k / 2);
    let mut deck: Vec<usize> = Vec::new();
    let mut deck_used = false;
    let mut retries = 0;

    let pick = |group: &[usize], chosen: &[bool], rng: &mut R, accept: &dyn Fn(usize) -> bool| -> Option<usize> {
        let open: Vec<usize> = group.iter().copied().filter(|&i| !chosen[i] && accept(i)).collect();
        (!open.is_empty()).then(|| open[rng.random_range(0..open.len())])
    };

    while pairs.len() < k / 2 {
        let c = match options.pair_draw {
            PairDraw::ExhaustThenReplace if !deck_used || !deck.is_empty() => {
                if !deck_used {
                    deck = sample(rng, n_clusters, n_clusters).into_vec();
                    deck_used = true;
                }
                deck.pop().expect("deck is non-empty")
            }
            _ => rng.random_range(0..n_clusters),
        };
        let partner = clusters.partner[c];
        let drawn = pick(&clusters.members[c], &chosen, rng, &|_| true).and_then(|a| {
            let industry = universe.industry_of[a];
            let cross = strategy == Strategy::IndustryCluster;
            pick(&clusters.members[partner], &chosen, rng, &|b| !cross || universe.industry_of[b] != industry)
                .map(|b| (a, b))
        });
        match drawn {
            Some((a, b)) => {
                chosen[a] = true;
                chosen[b] = true;
                members.extend([a, b]);
                pairs.push((a, b));
            }
            None => {
                retries += 1;
                if retries > options.max_retries {
                    return Err(infeasible(options.max_retries));
                }
            }
        }
    }

    if k % 2 == 1 {
        loop {
            let c = rng.random_range(0..n_clusters);
            if let Some(a) = pick(&clusters.members[c], &chosen, rng, &|_| true) {
                members.push(a);
                break;
            }
            retries += 1;
            if retries > options.max_retries {
                return Err(infeasible(options.max_retries));
            }
        }
    }
    Ok(finish(universe, strategy, members, pairs))
}

/// How the random streams of a simulation were derived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub seed: u64,
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub strategy: Strategy,
    pub size: usize,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_dev: f64,
    pub rng: RngInfo,
}

/// Generator for one iteration: ChaCha20 keyed by `(seed, strategy, size)`
/// with the iteration number as stream id.
pub fn iteration_rng(seed: u64, strategy: Strategy, size: usize, iteration: usize) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&strategy.code().to_le_bytes());
    key[16..24].copy_from_slice(&(size as u64).to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(iteration as u64);
    rng
}

pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Samples `iterations` portfolios in parallel and records their returns.
/// Each iteration has its own stream, so the result does not depend on
/// the thread schedule.
pub fn simulate(
    universe: &SelectionUniverse,
    strategy: Strategy,
    k: usize,
    iterations: usize,
    seed: u64,
    options: &SelectionOptions,
) -> Result<SimulationResult> {
    if iterations < 2 {
        return Err(PortfolioError::TooFewIterations(iterations));
    }
    if strategy.needs_clusters() && !universe.has_clusters() {
        return Err(PortfolioError::NoClusters(strategy));
    }
    let outcomes: Vec<Result<f64>> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(seed, strategy, k, it);
            select(universe, strategy, k, &mut rng, options).map(|p| p.period_return)
        })
        .collect();
    let mut returns = Vec::with_capacity(iterations);
    for (iteration, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => returns.push(r),
            Err(source) => {
                return Err(PortfolioError::Iteration { iteration, source: Box::new(source) });
            }
        }
    }
    let (mean, std_dev) = mean_and_std(&returns);
    Ok(SimulationResult {
        strategy,
        size: k,
        returns,
        mean,
        std_dev,
        rng: RngInfo {
            algorithm: "ChaCha20".into(),
            seed,
            derivation: "key = seed, strategy code, size (u64 little-endian); stream = iteration".into(),
        },
    })
}

/// Results for one portfolio size, with tests across strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub size: usize,
    pub results: Vec<SimulationResult>,
    /// `None` with fewer than two strategies or when every return is equal.
    pub anova: Option<TestReport>,
    pub levene: Option<TestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub strategies: Vec<Strategy>,
    pub sizes: Vec<SizeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub strategies: Vec<Strategy>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
    pub center: Center,
    pub selection: SelectionOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            sizes: vec![2, 4, 8, 16],
            iterations: 1000,
            seed: 0,
            center: Center::default(),
            selection: SelectionOptions::default(),
        }
    }
}

/// Simulates every strategy at every size and compares strategies per size.
pub fn run_study(universe: &SelectionUniverse, options: &StudyOptions) -> Result<SimulationReport> {
    let mut sizes = Vec::with_capacity(options.sizes.len());
    for &size in &options.sizes {
        let results = options
            .strategies
            .iter()
            .map(|&s| simulate(universe, s, size, options.iterations, options.seed, &options.selection))
            .collect::<Result<Vec<_>>>()?;
        let groups: Vec<&[f64]> = results.iter().map(|r| r.returns.as_slice()).collect();
        sizes.push(SizeReport {
            size,
            anova: anova_oneway(&groups).ok(),
            levene: levene(&groups, options.center).ok(),
            results,
        });
    }
    Ok(SimulationReport {
        strategies: options.strategies.clone(),
        sizes,
    })
}

impl SimulationReport {
    /// Table layout: one row of mean returns (percent) per size with the
    /// ANOVA p-value, then a row of standard deviations and the Levene
    /// p-value in brackets.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["size".to_string()];
        header.extend(self.strategies.iter().map(|s| s.name().to_string()));
        header.push("p_value".into());
        w.write_record(&header)?;
        let p = |t: &Option<TestReport>| t.map_or(String::new(), |t| format!("{:.4}", t.p_value));
        for row in &self.sizes {
            let mut means = vec![row.size.to_string()];
            means.extend(row.results.iter().map(|r| format!("{:.2}", 100.0 * r.mean)));
            means.push(p(&row.anova));
            w.write_record(&means)?;
            let mut stds = vec![String::new()];
            stds.extend(row.results.iter().map(|r| format!("({:.2})", 100.0 * r.std_dev)));
            let lp = p(&row.levene);
            stds.push(if lp.is_empty() { lp } else { format!("({lp})") });
            w.write_record(&stds)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, strategy: Strategy, size: usize) -> Option<&SimulationResult> {
        self.sizes
            .iter()
            .find(|r| r.size == size)
            .and_then(|r| r.results.iter().find(|s| s.strategy == strategy))
    }
}
