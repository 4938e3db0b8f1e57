//! Correlation networks for portfolio diversification.
//!
//! The pipeline runs from daily prices to a diversification study:
//!
//! 1. [`marketdata`] turns prices and dividends into five-trading-day returns
//!    and period total returns.
//! 2. [`corrdist`] estimates Pearson correlations and maps them to distances
//!    `d = sqrt(2 (1 - rho))`.
//! 3. [`neighbornet`] agglomerates the distance matrix into a circular ordering.
//! 4. [`splitweights`] fits non-negative weights to every split that is contiguous on
//!    that ordering and exports the result as NEXUS.
//! 5. [`clustering`] cuts the ordering into arcs (correlation clusters) and pairs
//!    each arc with the one opposite it.
//! 6. [`portfolio`] samples portfolios under four selection strategies and
//!    [`inference`] compares them with ANOVA and Levene tests.

pub mod clustering;
pub mod corrdist;
pub mod inference;
pub mod marketdata;
pub mod neighbornet;
pub mod portfolio;
pub mod splitweights;

pub use clustering::{ClusterAssignment, ClusterPairing};
pub use corrdist::{CorrelationMatrix, CorrelationSummary, DistanceMatrix};
pub use inference::{Center, TestReport};
pub use marketdata::{Industry, PriceSeries, ReturnMatrix, StudyPeriod};
pub use neighbornet::{AgglomerationTrace, CircularOrdering};
pub use portfolio::{Portfolio, SelectionUniverse, SimulationReport, SimulationResult, Strategy};
pub use splitweights::{CircularSplit, WeightedSplitSystem};
