//! Pipeline configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use corrnet::inference::Center;
use corrnet::marketdata::{default_boundaries, StudyPeriod};
use corrnet::portfolio::{PairDraw, SelectionOptions, Strategy, StudyOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    periods: PeriodsSection,
    #[serde(default)]
    clusters: ClustersSection,
    #[serde(default)]
    simulation: SimulationSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    prices: Option<PathBuf>,
    metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeriodsSection {
    boundaries: Option<Vec<DateValue>>,
}

/// A bare TOML date or a quoted `YYYY-MM-DD` string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DateValue {
    Toml(toml::value::Datetime),
    Text(NaiveDate),
}

impl DateValue {
    fn into_date(self) -> Result<NaiveDate> {
        match self {
            DateValue::Text(d) => Ok(d),
            DateValue::Toml(dt) => dt
                .date
                .filter(|_| dt.time.is_none() && dt.offset.is_none())
                .and_then(|d| NaiveDate::from_ymd_opt(d.year.into(), d.month.into(), d.day.into()))
                .ok_or_else(|| CliError::validation("config", format!("period boundary {dt} is not a plain date"))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClustersSection {
    k: Option<usize>,
    min_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    sizes: Option<Vec<usize>>,
    iterations: Option<usize>,
    seed: Option<u64>,
    center: Option<Center>,
    strategies: Option<Vec<Strategy>>,
    pair_draw: Option<PairDraw>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub prices: PathBuf,
    pub metadata: PathBuf,
    pub boundaries: Vec<NaiveDate>,
    pub k: usize,
    pub min_size: usize,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
    pub center: Center,
    pub strategies: Vec<Strategy>,
    pub pair_draw: PairDraw,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let study = StudyOptions::default();
        Self {
            prices: PathBuf::from("data/prices.csv"),
            metadata: PathBuf::from("data/metadata.csv"),
            boundaries: default_boundaries(),
            k: 8,
            min_size: 5,
            sizes: study.sizes,
            iterations: study.iterations,
            seed: 1,
            center: study.center,
            strategies: study.strategies,
            pair_draw: PairDraw::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// Reads `path` if given (relative paths inside resolve against its
    /// directory), applies `overrides` and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::io("config", format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
                Self::from_toml(&text, &base)?
            }
            None => Self::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| CliError::validation("config", e))?;
        let mut c = Self::default();
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        c.prices = resolve(file.data.prices.unwrap_or(c.prices));
        c.metadata = resolve(file.data.metadata.unwrap_or(c.metadata));
        c.out_dir = resolve(file.output.dir.unwrap_or(c.out_dir));
        if let Some(b) = file.periods.boundaries {
            c.boundaries = b.into_iter().map(DateValue::into_date).collect::<Result<_>>()?;
        }
        c.k = file.clusters.k.unwrap_or(c.k);
        c.min_size = file.clusters.min_size.unwrap_or(c.min_size);
        let s = file.simulation;
        c.sizes = s.sizes.unwrap_or(c.sizes);
        c.iterations = s.iterations.unwrap_or(c.iterations);
        c.seed = s.seed.unwrap_or(c.seed);
        c.center = s.center.unwrap_or(c.center);
        c.strategies = s.strategies.unwrap_or(c.strategies);
        c.pair_draw = s.pair_draw.unwrap_or(c.pair_draw);
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(sizes) = &o.sizes {
            self.sizes = sizes.clone();
        }
        if let Some(iterations) = o.iterations {
            self.iterations = iterations;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(CliError::validation("config", m));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return invalid(format!("portfolio sizes must be positive, got {:?}", self.sizes));
        }
        if self.iterations < 2 {
            return invalid(format!("need at least 2 iterations, got {}", self.iterations));
        }
        if self.k < 2 {
            return invalid(format!("cluster count must be at least 2, got {}", self.k));
        }
        if self.strategies.is_empty() {
            return invalid("no strategies selected".into());
        }
        self.periods()?;
        Ok(())
    }

    pub fn periods(&self) -> Result<Vec<StudyPeriod>> {
        if self.boundaries.len() < 2 {
            return Err(CliError::validation("config", "need at least two period boundaries"));
        }
        StudyPeriod::from_boundaries(&self.boundaries).map_err(|e| CliError::validation("config", e))
    }

    pub fn study_options(&self) -> StudyOptions {
        StudyOptions {
            strategies: self.strategies.clone(),
            sizes: self.sizes.clone(),
            iterations: self.iterations,
            seed: self.seed,
            center: self.center,
            selection: SelectionOptions {
                pair_draw: self.pair_draw,
                ..Default::default()
            },
        }
    }

    /// Saved assignment for a 1-based period.
    pub fn cluster_file(&self, period: usize) -> PathBuf {
        self.out_dir.join(format!("period{period}_clusters.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_overrides() {
        let text = r#"
            [data]
            prices = "p.csv"
            [clusters]
            k = 5
            [simulation]
            sizes = [2, 4]
            seed = 9
            center = "mean"
            strategies = ["random", "cluster"]
        "#;
        let mut c = PipelineConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(c.prices, PathBuf::from("/base/p.csv"));
        assert_eq!(c.metadata, PathBuf::from("/base/data/metadata.csv"));
        assert_eq!((c.k, c.seed, c.center), (5, 9, Center::Mean));
        assert_eq!(c.strategies, vec![Strategy::Random, Strategy::Cluster]);
        c.apply(&Overrides { seed: Some(3), sizes: Some(vec![8]), ..Default::default() });
        assert_eq!((c.seed, c.sizes.clone(), c.iterations), (3, vec![8], 1000));
        c.validate().unwrap();
    }

    #[test]
    fn example_file_matches_defaults() {
        let text = include_str!("../../../corrnet.toml");
        let c = PipelineConfig::from_toml(text, Path::new("")).unwrap();
        assert_eq!(c, PipelineConfig::default());
        let quoted = PipelineConfig::from_toml("[periods]\nboundaries = [\"2005-05-13\", \"2006-06-13\"]", Path::new("")).unwrap();
        assert_eq!(quoted.boundaries, default_boundaries()[..2]);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(PipelineConfig::from_toml("[simulation]\nbogus = 1", Path::new("")).is_err());
        assert!(PipelineConfig::from_toml("[periods]\nboundaries = [2005-05-13T10:00:00, 2006-01-01]", Path::new("")).is_err());
        let c = PipelineConfig { sizes: vec![0], ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { boundaries: vec![NaiveDate::from_ymd_opt(2005, 1, 1).unwrap()], ..Default::default() };
        assert!(c.validate().is_err());
    }
}
