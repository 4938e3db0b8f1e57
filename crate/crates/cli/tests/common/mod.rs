#![allow(dead_code)]

use std::path::{Path, PathBuf};

use corrnet_cli::config::{Overrides, PipelineConfig};
use corrnet_cli::pipeline::synthesize;
use tempfile::TempDir;

pub fn metadata_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/metadata.csv")
}

/// A scratch directory with the ticker metadata, a config file and
/// synthetic prices over the default study periods.
pub struct Workspace {
    pub dir: TempDir,
    pub config_path: PathBuf,
}

impl Workspace {
    pub fn new(iterations: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::copy(metadata_path(), dir.path().join("metadata.csv")).unwrap();
        let config_path = dir.path().join("corrnet.toml");
        std::fs::write(
            &config_path,
            format!(
                "[data]\nprices = \"prices.csv\"\nmetadata = \"metadata.csv\"\n\n\
                 [simulation]\niterations = {iterations}\nseed = 11\n\n[output]\ndir = \"out\"\n"
            ),
        )
        .unwrap();
        let ws = Self { dir, config_path };
        let config = ws.config(&Overrides::default());
        synthesize(&config, &config.prices).unwrap();
        ws
    }

    pub fn config(&self, overrides: &Overrides) -> PipelineConfig {
        PipelineConfig::load(Some(&self.config_path), overrides).unwrap()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}
