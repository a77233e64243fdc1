//! The run configuration file: TOML sections for the model, training,
//! data paths, run settings and the synthetic generator. Unknown keys are
//! rejected; every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::PGformerConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training motion file.
    pub train: Option<PathBuf>,
    /// Held-out motion file; falls back to `train` when absent.
    pub test: Option<PathBuf>,
    /// Window stride for training samples.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub out: PathBuf,
    pub seed: u64,
    /// Evaluation horizons in seconds.
    pub horizons: Vec<f64>,
    /// Upper bound for requested horizons, seconds.
    pub max_horizon: f64,
    /// Stride between evaluation windows.
    pub eval_stride: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            seed: 0,
            horizons: vec![0.2, 0.4, 0.6, 1.0],
            max_horizon: 2.0,
            eval_stride: 25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: PGformerConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub run: RunSettings,
    pub synth: SyntheticConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.model.validate()?;
        if cfg.data.stride == 0 {
            return Err(Error::Config("data.stride must be positive".into()));
        }
        Ok(cfg)
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            stride: 1,
        }
    }
}
