//! Run metadata written beside trace.bin so report can re-derive every
//! summary from the stored records alone.

use lcreg::error::Result;
use lcreg::model::PriorConfig;
use lcreg::trace::{Mode, ModelKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const META_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub meta_version: u32,
    pub model: ModelKind,
    pub mode: Mode,
    pub n_classes: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub n_obs: usize,
    pub levels: Vec<usize>,
    pub item_names: Vec<String>,
    pub predictor_names: Vec<String>,
    pub priors: PriorConfig,
    pub responses_path: PathBuf,
    pub schema_path: PathBuf,
    pub covariates_path: Option<PathBuf>,
    /// 1-based CSV rows dropped for missing responses.
    pub dropped_rows: Vec<usize>,
}

impl RunMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}
