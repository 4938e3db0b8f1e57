use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corrnet::clustering::pair_clusters;
use corrnet_cli::config::{Overrides, PipelineConfig};
use corrnet_cli::error::{CliError, Result, Stage};
use corrnet_cli::pipeline::{self, Dataset, PeriodNetwork};
use corrnet_cli::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "corrnet", version, about = "Correlation networks, split clusters and portfolio simulation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// 1-based study period; defaults to every applicable period.
    #[arg(long, global = true)]
    period: Option<usize>,
    /// Number of clusters.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Comma-separated portfolio sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load prices and write weekly returns per period.
    Ingest,
    /// Fit split networks and write NEXUS files and the correlation summary.
    Net,
    /// Delineate clusters and write the cluster files.
    Clusters {
        /// Ignore saved cluster files.
        #[arg(long)]
        recluster: bool,
    },
    /// Simulate portfolios for estimation periods.
    Simulate {
        #[arg(long)]
        recluster: bool,
    },
    /// The whole pipeline.
    Run {
        #[arg(long)]
        recluster: bool,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write synthetic prices for the configured tickers and periods.
    Synth {
        /// Destination; defaults to the configured prices file.
        #[arg(long)]
        to: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        k: cli.k,
        sizes: cli.sizes,
        iterations: cli.iterations,
        out: cli.out,
    };
    let config = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let n_periods = config.periods()?.len();
    let selected = |last: usize| -> Result<Vec<usize>> {
        match cli.period {
            Some(p) if (1..=last).contains(&p) => Ok(vec![p]),
            Some(p) => Err(CliError::validation("period", format!("period {p} is not in 1..={last}"))),
            None => Ok((1..=last).collect()),
        }
    };

    match cli.command {
        Command::Ingest => {
            let dataset = Dataset::load(&config)?;
            for p in selected(n_periods)? {
                let returns = dataset.returns(p)?;
                let path = config.out_dir.join(format!("returns_period{p}.csv"));
                pipeline::write_returns(&path, &returns)?;
                println!(
                    "period {p}: {} tickers, {} weekly windows -> {}",
                    returns.n_tickers(),
                    returns.n_windows(),
                    path.display()
                );
            }
        }
        Command::Net => {
            let dataset = Dataset::load(&config)?;
            let mut rows = Vec::new();
            for p in selected(n_periods)? {
                let network = PeriodNetwork::build(&dataset, p)?;
                let path = config.out_dir.join(format!("period{p}.nex"));
                pipeline::write_nexus(&path, &network)?;
                println!(
                    "period {p}: {} splits, residual {:.6} -> {}",
                    network.system.splits().len(),
                    network.system.fit_residual(),
                    path.display()
                );
                rows.push((p, network.summary));
            }
            let path = config.out_dir.join("correlation_summary.csv");
            pipeline::write_summary_csv(&path, &rows)?;
            println!("{}", path.display());
        }
        Command::Clusters { recluster } => {
            let dataset = Dataset::load(&config)?;
            for p in selected(n_periods)? {
                let network = PeriodNetwork::build(&dataset, p)?;
                let assignment = pipeline::clusters_for(&config, &network, recluster)?;
                let path = config.cluster_file(p);
                pipeline::save_clusters(&path, &assignment, &network.tickers)?;
                println!(
                    "period {p}: sizes {:?}, pairs {:?} -> {}",
                    assignment.cluster_sizes(),
                    pair_clusters(&assignment).as_slice(),
                    path.display()
                );
            }
        }
        Command::Simulate { recluster } => {
            let dataset = Dataset::load(&config)?;
            for p in selected(n_periods - 1)? {
                let network = PeriodNetwork::build(&dataset, p)?;
                let assignment = pipeline::clusters_for(&config, &network, recluster)?;
                let report = pipeline::simulate_pair(&config, &network, &assignment, dataset.period_returns(p + 1)?)?;
                let stem = pipeline::report_stem(p, p + 1);
                let csv_path = config.out_dir.join(format!("{stem}.csv"));
                pipeline::write_report(&csv_path, &config.out_dir.join(format!("{stem}.json")), &report)?;
                println!("{}", csv_path.display());
            }
        }
        Command::Run { recluster } => {
            for path in pipeline::cmd_run(&config, recluster)?.artifacts {
                println!("{}", path.display());
            }
        }
        Command::Serve { bind } => {
            let state = AppState::build(config)?;
            let runtime = tokio::runtime::Runtime::new().stage("serve")?;
            runtime.block_on(server::serve(state, bind))?;
        }
        Command::Synth { to } => {
            let path = to.unwrap_or_else(|| config.prices.clone());
            let n = pipeline::synthesize(&config, &path)?;
            println!("{n} synthetic series -> {}", path.display());
        }
    }
    Ok(())
}
