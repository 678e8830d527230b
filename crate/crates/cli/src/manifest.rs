use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use nor_core::training::TrainingConfig;
use nor_core::write_atomic;

/// Everything needed to reproduce a training run. `wall_clock_seconds` is
/// the only field that varies between identical runs.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainingConfig,
    pub config_text: String,
    pub dataset: PathBuf,
    pub dataset_hash: String,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: Option<PathBuf>,
    pub best_epoch: usize,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }
}
