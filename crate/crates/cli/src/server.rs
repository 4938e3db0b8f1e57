//! JSON service over precomputed period networks.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use corrnet::clustering::{delineate_manual, pair_clusters, track_cluster, track_membership, ClusterAssignment, ContiguityReport};
use corrnet::corrdist::CorrelationSummary;
use corrnet::inference::Center;
use corrnet::marketdata::Industry;
use corrnet::portfolio::{run_study, SimulationReport, Strategy};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::config::PipelineConfig;
use crate::error::{CliError, ErrorKind, Result};
use crate::pipeline::{self, Dataset, PeriodNetwork};

/// Upper bound on iterations accepted per simulation request.
pub const MAX_ITERATIONS: usize = 100_000;

struct PeriodState {
    network: PeriodNetwork,
    returns: Vec<f64>,
    clusters: Mutex<ClusterAssignment>,
}

pub struct AppState {
    config: PipelineConfig,
    periods: Vec<PeriodState>,
}

impl AppState {
    /// Builds every period's network and clusters (saved ones when present).
    pub fn build(config: PipelineConfig) -> Result<Self> {
        let dataset = Dataset::load(&config)?;
        let periods = (1..=dataset.periods.len())
            .map(|p| {
                let network = PeriodNetwork::build(&dataset, p)?;
                let clusters = pipeline::clusters_for(&config, &network, false)?;
                Ok(PeriodState {
                    returns: dataset.period_returns(p)?,
                    clusters: Mutex::new(clusters),
                    network,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, periods })
    }

    fn period(&self, index: usize) -> std::result::Result<&PeriodState, ApiError> {
        index
            .checked_sub(1)
            .and_then(|i| self.periods.get(i))
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_period", format!("no period {index}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/periods", get(get_periods))
        .route("/network", get(get_network))
        .route("/clusters", get(get_clusters).put(put_clusters))
        .route("/simulate", post(post_simulate))
        .route("/track", get(get_track))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::io("serve", format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::io("serve", e))?;
    println!("listening on http://{local}");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io("serve", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.to_string(),
            },
        }
    }

    fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn unprocessable(code: &str, message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e.kind {
            ErrorKind::Validation => Self::unprocessable("invalid_request", e),
            ErrorKind::Io => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io_error", e),
            ErrorKind::Numerical => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "numerical_error", e),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::unprocessable("invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Params = Query<HashMap<String, String>>;

fn required_index(params: &HashMap<String, String>, name: &str) -> std::result::Result<usize, ApiError> {
    let raw = params
        .get(name)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{name}`")))?;
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("`{name}` must be a positive integer, got {raw:?}")))
}

fn optional_index(params: &HashMap<String, String>, name: &str) -> std::result::Result<Option<usize>, ApiError> {
    params.contains_key(name).then(|| required_index(params, name)).transpose()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodInfo {
    pub period: usize,
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n_taxa: usize,
}

async fn get_periods(State(state): State<Arc<AppState>>) -> Json<Vec<PeriodInfo>> {
    Json(
        state
            .periods
            .iter()
            .map(|p| PeriodInfo {
                period: p.network.index,
                label: p.network.period.label.clone(),
                start: p.network.period.start,
                end: p.network.period.end,
                n_taxa: p.network.n_taxa(),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitView {
    pub p: usize,
    pub q: usize,
    pub weight: f64,
    /// Taxa at ordering positions `p..=q`.
    pub side: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkView {
    pub period: usize,
    pub tickers: Vec<String>,
    pub industries: Vec<Industry>,
    pub ordering: Vec<usize>,
    pub candidate_splits: usize,
    pub splits: Vec<SplitView>,
    pub residual: f64,
    pub correlation: CorrelationSummary,
}

async fn get_network(State(state): State<Arc<AppState>>, Query(params): Params) -> ApiResult<NetworkView> {
    let index = required_index(&params, "period")?;
    let network = &state.period(index)?.network;
    let system = &network.system;
    let n = network.n_taxa();
    Ok(Json(NetworkView {
        period: index,
        tickers: network.tickers.clone(),
        industries: network.industries.clone(),
        ordering: system.ordering().taxa().to_vec(),
        candidate_splits: n * (n - 1) / 2,
        splits: system
            .splits()
            .iter()
            .map(|s| SplitView {
                p: s.split.p(),
                q: s.split.q(),
                weight: s.weight,
                side: s.split.side(system.ordering()),
            })
            .collect(),
        residual: system.fit_residual(),
        correlation: network.summary.clone(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClustersView {
    pub period: usize,
    pub ordering: Vec<usize>,
    pub boundaries: Vec<usize>,
    /// 1-based cluster of each taxon.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// 1-based partner of each cluster.
    pub pairing: Vec<usize>,
}

fn clusters_view(period: usize, a: &ClusterAssignment) -> ClustersView {
    ClustersView {
        period,
        ordering: a.ordering().taxa().to_vec(),
        boundaries: a.boundaries().to_vec(),
        labels: a.labels().to_vec(),
        sizes: a.cluster_sizes(),
        pairing: pair_clusters(a).as_slice().to_vec(),
    }
}

async fn get_clusters(State(state): State<Arc<AppState>>, Query(params): Params) -> ApiResult<ClustersView> {
    let index = required_index(&params, "period")?;
    let clusters = state.period(index)?.clusters.lock().await;
    Ok(Json(clusters_view(index, &clusters)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundariesRequest {
    pub boundaries: Vec<usize>,
}

async fn put_clusters(
    State(state): State<Arc<AppState>>,
    Query(params): Params,
    body: std::result::Result<Json<BoundariesRequest>, JsonRejection>,
) -> ApiResult<ClustersView> {
    let index = required_index(&params, "period")?;
    let Json(request) = body?;
    let period = state.period(index)?;
    let assignment = delineate_manual(period.network.system.ordering(), &request.boundaries)
        .map_err(|e| ApiError::unprocessable("invalid_boundaries", e))?;
    let mut clusters = period.clusters.lock().await;
    pipeline::save_clusters(&state.config.cluster_file(index), &assignment, &period.network.tickers)?;
    *clusters = assignment;
    Ok(Json(clusters_view(index, &clusters)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub estimation: usize,
    pub evaluation: Option<usize>,
    pub strategies: Option<Vec<Strategy>>,
    pub sizes: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub center: Option<Center>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub estimation: usize,
    pub evaluation: usize,
    pub boundaries: Vec<usize>,
    pub report: SimulationReport,
}

async fn post_simulate(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<SimulateRequest>, JsonRejection>,
) -> ApiResult<SimulateResponse> {
    let Json(request) = body?;
    let estimation = state.period(request.estimation)?;
    let evaluation_index = request.evaluation.unwrap_or(request.estimation + 1);
    let evaluation = state.period(evaluation_index)?;
    if evaluation_index <= request.estimation {
        return Err(ApiError::unprocessable(
            "invalid_request",
            "the evaluation period must follow the estimation period",
        ));
    }
    let mut options = state.config.study_options();
    if let Some(strategies) = request.strategies {
        options.strategies = strategies;
    }
    if let Some(sizes) = request.sizes {
        options.sizes = sizes;
    }
    if let Some(iterations) = request.iterations {
        options.iterations = iterations;
    }
    if let Some(seed) = request.seed {
        options.seed = seed;
    }
    if let Some(center) = request.center {
        options.center = center;
    }
    if options.iterations > MAX_ITERATIONS {
        return Err(ApiError::unprocessable(
            "invalid_request",
            format!("at most {MAX_ITERATIONS} iterations per request"),
        ));
    }
    if options.strategies.is_empty() || options.sizes.is_empty() {
        return Err(ApiError::unprocessable("invalid_request", "strategies and sizes must be non-empty"));
    }

    let clusters = estimation.clusters.lock().await;
    let assignment = clusters.clone();
    let universe = pipeline::universe(&estimation.network, &assignment, evaluation.returns.clone())?;
    let report = tokio::task::spawn_blocking(move || run_study(&universe, &options))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .map_err(|e| ApiError::unprocessable("invalid_request", e))?;
    drop(clusters);
    Ok(Json(SimulateResponse {
        estimation: request.estimation,
        evaluation: evaluation_index,
        boundaries: assignment.boundaries().to_vec(),
        report,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackView {
    pub period: usize,
    pub later: usize,
    pub subset: Vec<String>,
    pub report: ContiguityReport,
}

async fn get_track(State(state): State<Arc<AppState>>, Query(params): Params) -> ApiResult<TrackView> {
    let index = required_index(&params, "period")?;
    let reference = state.period(index)?;
    let later_index = optional_index(&params, "later")?.unwrap_or(index + 1);
    let later = state.period(later_index)?;
    let assignment = reference.clusters.lock().await.clone();
    let tickers = &reference.network.tickers;
    let later_ordering = later.network.system.ordering();

    let (subset, report) = match (params.get("subset"), optional_index(&params, "cluster")?) {
        (Some(list), None) => {
            let members = list
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    tickers
                        .iter()
                        .position(|x| x == t)
                        .ok_or_else(|| ApiError::unprocessable("unknown_ticker", format!("unknown ticker {t:?}")))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let report = track_membership(&assignment, later_ordering, &members)
                .map_err(|e| ApiError::unprocessable("invalid_subset", e))?;
            (members, report)
        }
        (None, Some(cluster)) => {
            let report = track_cluster(&assignment, cluster, later_ordering)
                .map_err(|e| ApiError::unprocessable("unknown_cluster", e))?;
            let members = assignment.clusters().swap_remove(cluster - 1);
            (members, report)
        }
        _ => return Err(ApiError::bad_request("give exactly one of `subset` or `cluster`")),
    };
    Ok(Json(TrackView {
        period: index,
        later: later_index,
        subset: subset.iter().map(|&i| tickers[i].clone()).collect(),
        report,
    }))
}
