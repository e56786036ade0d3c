//! Run configuration: a TOML document with a default for every field.
//!
//! ```toml
//! seed = 1
//!
//! [data]
//! subset = "FD001"
//! data_dir = "data/CMAPSS"
//! # prepared = "runs/FD001.prepared.csv"   (default: <output.dir>/<subset>.prepared.csv)
//! validation_fraction = 0.2
//! split_seed = 0
//!
//! [model]
//! d_model = 32
//! ffn_width = 64
//! rul_width = 10
//! rul_depth = 3
//! nfnn_width = 16
//! ablation = "full"
//!
//! [train]
//! epochs = 100
//! batch_size = 512
//! lr_initial = 0.001
//! lr_decay_epoch = 50
//! lr_after = 0.0001
//! divergence_factor = 10.0
//! divergence_patience = 5
//! clamp_predictions = true
//!
//! [train.balancer]
//! alpha = 0.999
//! temperature = 0.1
//! rho_mean = 0.999
//!
//! [output]
//! dir = "runs"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Subset;
use crate::error::{CoreError, Result};
use crate::model::{Ablation, ModelConfig};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub subset: Subset,
    /// Directory holding the raw `train_`, `test_` and `RUL_` files.
    pub data_dir: PathBuf,
    /// Prepared dataset written by `prepare` and read by `train`.
    pub prepared: Option<PathBuf>,
    pub validation_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            subset: Subset::FD001,
            data_dir: PathBuf::from("data/CMAPSS"),
            prepared: None,
            validation_fraction: 0.2,
            split_seed: 0,
        }
    }
}

/// Architecture hyperparameters; window and sensor count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub ffn_width: usize,
    pub rul_width: usize,
    pub rul_depth: usize,
    pub nfnn_width: usize,
    pub ablation: Ablation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, Ablation::Full);
        Self {
            d_model: m.d_model,
            ffn_width: m.ffn_width,
            rul_width: m.rul_width,
            rul_depth: m.rul_depth,
            nfnn_width: m.nfnn_width,
            ablation: m.ablation,
        }
    }
}

impl ModelSection {
    pub fn build(&self, window: usize, sensors: usize) -> ModelConfig {
        ModelConfig {
            window,
            sensors,
            d_model: self.d_model,
            ffn_width: self.ffn_width,
            rul_width: self.rul_width,
            rul_depth: self.rul_depth,
            nfnn_width: self.nfnn_width,
            ablation: self.ablation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML document; missing fields take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CoreError::Config(errs) => CoreError::Config(errs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn prepared_path(&self) -> PathBuf {
        self.data.prepared.clone().unwrap_or_else(|| self.output.dir.join(format!("{}.prepared.csv", self.data.subset)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let f = self.data.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            errs.push(format!("data.validation_fraction must lie in (0, 1), got {f}"));
        }
        let window = self.data.subset.window_len();
        errs.extend(self.model.build(window, crate::data::KEPT_SENSORS).validate().into_iter().map(|e| format!("model: {e}")));
        errs.extend(self.train.validate());
        errs
    }

    pub fn validated(self) -> Result<Self> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(CoreError::Config(errs))
        }
    }
}
