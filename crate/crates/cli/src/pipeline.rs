//! Pipeline stages shared by the subcommands and the service.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Datelike;
use corrnet::clustering::{delineate_auto, pair_clusters, ClusterAssignment};
use corrnet::corrdist::{correlations, summarize, to_distance, CorrelationSummary};
use corrnet::marketdata::{
    generate_synthetic, load_metadata, load_prices, period_total_return, weekly_returns, write_prices,
    FactorSpec, Industry, Metadata, PriceSeries, Regime, ReturnMatrix, StudyPeriod,
};
use corrnet::neighbornet::circular_ordering;
use corrnet::portfolio::{run_study, SelectionUniverse, SimulationReport};
use corrnet::splitweights::{export_nexus, fit_weights, WeightedSplitSystem};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result, Stage};

/// Metadata, price series (sorted by ticker) and study periods.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub metadata: Metadata,
    pub series: Vec<PriceSeries>,
    pub periods: Vec<StudyPeriod>,
}

impl Dataset {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let metadata = File::open(&config.metadata)
            .map_err(|e| CliError::io("metadata", format!("{}: {e}", config.metadata.display())))?;
        let metadata = load_metadata(metadata).stage("metadata")?;
        let prices = File::open(&config.prices).map_err(|e| {
            CliError::io(
                "prices",
                format!("{}: {e} (`corrnet synth` writes a synthetic price file)", config.prices.display()),
            )
        })?;
        let series = load_prices(prices, &metadata).stage("prices")?;
        if series.is_empty() {
            return Err(CliError::validation("prices", "no price rows"));
        }
        Ok(Self {
            metadata,
            series,
            periods: config.periods()?,
        })
    }

    pub fn tickers(&self) -> Vec<String> {
        self.series.iter().map(|s| s.ticker().to_string()).collect()
    }

    pub fn industries(&self) -> Vec<Industry> {
        self.series.iter().map(|s| s.industry().clone()).collect()
    }

    /// The 1-based period `index`.
    pub fn period(&self, index: usize) -> Result<&StudyPeriod> {
        index
            .checked_sub(1)
            .and_then(|i| self.periods.get(i))
            .ok_or_else(|| CliError::validation("period", format!("period {index} is not in 1..={}", self.periods.len())))
    }

    pub fn returns(&self, index: usize) -> Result<ReturnMatrix> {
        let period = self.period(index)?;
        weekly_returns(&self.series, period).stage(&format!("returns for period {index}"))
    }

    /// Total return of every stock over the 1-based period `index`.
    pub fn period_returns(&self, index: usize) -> Result<Vec<f64>> {
        let period = self.period(index)?;
        self.series
            .iter()
            .map(|s| period_total_return(s, period))
            .collect::<std::result::Result<_, _>>()
            .stage(&format!("total returns for period {index}"))
    }
}

/// The network estimated from one period's returns.
#[derive(Debug, Clone)]
pub struct PeriodNetwork {
    pub index: usize,
    pub period: StudyPeriod,
    pub tickers: Vec<String>,
    pub industries: Vec<Industry>,
    pub summary: CorrelationSummary,
    pub system: WeightedSplitSystem,
}

impl PeriodNetwork {
    pub fn build(dataset: &Dataset, index: usize) -> Result<Self> {
        let returns = dataset.returns(index)?;
        let rho = correlations(&returns).stage(&format!("correlations for period {index}"))?;
        let d = to_distance(&rho);
        let (ordering, _) = circular_ordering(&d);
        let system = fit_weights(&d, &ordering).stage(&format!("split weights for period {index}"))?;
        Ok(Self {
            index,
            period: dataset.period(index)?.clone(),
            tickers: returns.tickers.clone(),
            industries: dataset.industries(),
            summary: summarize(&rho),
            system,
        })
    }

    pub fn n_taxa(&self) -> usize {
        self.tickers.len()
    }
}

/// Loads the saved assignment for the network's period, if any.
pub fn saved_clusters(config: &PipelineConfig, network: &PeriodNetwork) -> Result<Option<ClusterAssignment>> {
    let path = config.cluster_file(network.index);
    if !path.exists() {
        return Ok(None);
    }
    let stage = format!("saved clusters {}", path.display());
    let file = File::open(&path).stage(&stage)?;
    ClusterAssignment::read_csv(file, network.system.ordering(), &network.tickers)
        .stage(&stage)
        .map(Some)
}

/// The saved assignment unless `recluster`, else the automatic one.
pub fn clusters_for(config: &PipelineConfig, network: &PeriodNetwork, recluster: bool) -> Result<ClusterAssignment> {
    if !recluster {
        if let Some(saved) = saved_clusters(config, network)? {
            return Ok(saved);
        }
    }
    delineate_auto(&network.system, config.k, config.min_size).stage(&format!("clusters for period {}", network.index))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, stage: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(stage, format!("{}: {e}", dir.display())))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| CliError::io(stage, format!("{}: {e}", tmp.display())))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().stage(stage)?;
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(stage, format!("{}: {e}", path.display())))
}

pub fn save_clusters(path: &Path, assignment: &ClusterAssignment, tickers: &[String]) -> Result<()> {
    write_atomic(path, "save clusters", |w| assignment.write_csv(w, tickers).stage("save clusters"))
}

pub fn universe(network: &PeriodNetwork, assignment: &ClusterAssignment, returns: Vec<f64>) -> Result<SelectionUniverse> {
    SelectionUniverse::new(network.tickers.clone(), network.industries.clone(), returns)
        .and_then(|u| u.with_clusters(assignment, &pair_clusters(assignment)))
        .stage("selection universe")
}

pub fn simulate_pair(
    config: &PipelineConfig,
    network: &PeriodNetwork,
    assignment: &ClusterAssignment,
    evaluation_returns: Vec<f64>,
) -> Result<SimulationReport> {
    let universe = universe(network, assignment, evaluation_returns)?;
    run_study(&universe, &config.study_options()).stage("simulation")
}

pub fn write_summary_csv(path: &Path, rows: &[(usize, CorrelationSummary)]) -> Result<()> {
    let stage = "correlation summary";
    write_atomic(path, stage, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["period", "mean", "std_dev", "min", "max", "negative"]).stage(stage)?;
        for (period, s) in rows {
            out.write_record([
                period.to_string(),
                format!("{:.3}", s.mean),
                format!("{:.3}", s.std_dev),
                format!("{:.3}", s.min),
                format!("{:.3}", s.max),
                format!("{}/{}", s.negative_count, s.total_pairs),
            ])
            .stage(stage)?;
        }
        out.flush().stage(stage)
    })
}

pub fn write_nexus(path: &Path, network: &PeriodNetwork) -> Result<()> {
    let text = export_nexus(&network.system, &network.tickers).stage("nexus export")?;
    write_atomic(path, "nexus export", |w| w.write_all(text.as_bytes()).stage("nexus export"))
}

pub fn write_report(csv_path: &Path, json_path: &Path, report: &SimulationReport) -> Result<()> {
    write_atomic(csv_path, "report", |w| report.write_csv(w).stage("report"))?;
    write_atomic(json_path, "report", |w| {
        serde_json::to_writer_pretty(&mut *w, report).stage("report")?;
        w.write_all(b"\n").stage("report")
    })
}

pub fn write_returns(path: &Path, returns: &ReturnMatrix) -> Result<()> {
    let stage = "returns";
    write_atomic(path, stage, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["window_start".to_string(), "window_end".to_string()];
        header.extend(returns.tickers.iter().cloned());
        out.write_record(&header).stage(stage)?;
        for (row, (start, end)) in returns.values.rows().into_iter().zip(&returns.windows) {
            let mut record = vec![start.to_string(), end.to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&record).stage(stage)?;
        }
        out.flush().stage(stage)
    })
}

/// Names of the files `run` writes, relative to the output directory.
pub fn report_stem(estimation: usize, evaluation: usize) -> String {
    format!("report_period{estimation}_to_{evaluation}")
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub reports: Vec<(usize, usize, SimulationReport)>,
}

/// Full study: a network and summary for every period, clusters for every
/// estimation period and a report for each consecutive period pair.
pub fn cmd_run(config: &PipelineConfig, recluster: bool) -> Result<RunSummary> {
    let dataset = Dataset::load(config)?;
    let n_periods = dataset.periods.len();
    let networks = (1..=n_periods)
        .map(|p| PeriodNetwork::build(&dataset, p))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = RunSummary::default();

    let path = config.out_dir.join("correlation_summary.csv");
    let rows: Vec<(usize, CorrelationSummary)> = networks.iter().map(|n| (n.index, n.summary.clone())).collect();
    write_summary_csv(&path, &rows)?;
    summary.artifacts.push(path);

    for network in &networks {
        let path = config.out_dir.join(format!("period{}.nex", network.index));
        write_nexus(&path, network)?;
        summary.artifacts.push(path);
    }

    for network in &networks[..n_periods - 1] {
        let assignment = clusters_for(config, network, recluster)?;
        let path = config.cluster_file(network.index);
        save_clusters(&path, &assignment, &network.tickers)?;
        summary.artifacts.push(path);

        let evaluation = network.index + 1;
        let report = simulate_pair(config, network, &assignment, dataset.period_returns(evaluation)?)?;
        let stem = report_stem(network.index, evaluation);
        let (csv_path, json_path) = (config.out_dir.join(format!("{stem}.csv")), config.out_dir.join(format!("{stem}.json")));
        write_report(&csv_path, &json_path, &report)?;
        summary.artifacts.extend([csv_path, json_path]);
        summary.reports.push((network.index, evaluation, report));
    }
    Ok(summary)
}

/// Synthetic prices for the configured tickers spanning every study
/// period, with a different market regime in each period.
pub fn synthesize(config: &PipelineConfig, path: &Path) -> Result<usize> {
    let file = File::open(&config.metadata).map_err(|e| CliError::io("metadata", format!("{}: {e}", config.metadata.display())))?;
    let metadata = load_metadata(file).stage("metadata")?;
    let periods = config.periods()?;
    let start = periods[0].start;
    let end = periods[periods.len() - 1].end;
    let weekdays = |from: chrono::NaiveDate, to: chrono::NaiveDate| {
        from.iter_days()
            .take_while(|d| *d <= to)
            .filter(|d| d.weekday().number_from_monday() <= 5)
            .count()
    };
    let n_weeks = weekdays(start, end).div_ceil(5);
    let moods = [(0.0006, 1.0), (0.0012, 1.3), (-0.0015, 1.8), (0.0005, 1.2)];
    let mut spec = FactorSpec::from_metadata(&metadata, config.k, 1.0, 0.4);
    spec.start = start;
    spec.dividend_yield = 0.02;
    spec.regimes = periods
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (drift, vol_scale) = moods[i % moods.len()];
            Regime {
                start_week: weekdays(start, p.start).saturating_sub(1) / 5,
                drift,
                vol_scale,
            }
        })
        .collect();
    let series = generate_synthetic(metadata.len(), n_weeks, &spec, config.seed).stage("synthetic prices")?;
    write_atomic(path, "synthetic prices", |w| write_prices(w, &series).stage("synthetic prices"))?;
    Ok(series.len())
}
