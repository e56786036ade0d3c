//! End-to-end operations shared by the command line and the test suites.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{parse_subset, Window, RUL_CAP};
use crate::error::{CoreError, Result};
use crate::metrics::{evaluate, EvalReport, Trial};
use crate::model::Model;
use crate::prepared::PreparedDataset;
use crate::training::{train, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const HIDDEN_HEADER: &str = "unit,end_cycle,h1,h2,h3,true_rul,pred_rul";

/// Outputs of one training trial on disk.
#[derive(Clone, Debug)]
pub struct TrialArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub epochs_run: usize,
}

/// Train one trial and write `checkpoint.bin`, `history.jsonl` and the
/// effective `config.toml` into `out_dir`.
pub fn run_trial(config: &RunConfig, data: &PreparedDataset, seed: u64, out_dir: &Path) -> Result<TrialArtifacts> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(CoreError::Config(errs));
    }
    if config.data.subset != data.header.subset {
        return Err(CoreError::Validation(format!(
            "config names subset {} but the prepared dataset holds {}",
            config.data.subset, data.header.subset
        )));
    }
    let mut effective = config.clone();
    effective.seed = seed;
    fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, effective.to_toml()).map_err(|e| CoreError::io(&config_path, e))?;

    let (train_set, val_set) = data.split()?;
    let model_cfg = effective.model.build(data.header.window, data.header.sensors.len());
    let mut model = Model::new(model_cfg, seed)?;
    let history_path = out_dir.join(HISTORY_FILE);
    let file = File::create(&history_path).map_err(|e| CoreError::io(&history_path, e))?;
    let mut log = BufWriter::new(file);
    log::info!(
        "training {} ({}) seed {seed}: {} train / {} validation windows",
        data.header.subset,
        effective.model.ablation,
        train_set.len(),
        val_set.len()
    );
    let TrainOutcome { best, best_epoch, best_val_rmse, history } =
        train(&mut model, &train_set, &val_set, &effective.train, seed, Some(&mut log)).map_err(|f| f.error)?;
    model.store = best;
    let checkpoint = Checkpoint::new(
        effective,
        model,
        data.header.subset,
        seed,
        data.header.norm_stats.clone(),
        best_epoch,
        best_val_rmse,
    );
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    checkpoint.save(&ck_path)?;
    Ok(TrialArtifacts {
        dir: out_dir.to_path_buf(),
        checkpoint: ck_path,
        history: history_path,
        best_epoch,
        best_val_rmse,
        epochs_run: history.len(),
    })
}

/// Load checkpoints that share one subset and model layout and score them
/// on the raw test files in `data_dir`.
pub fn evaluate_checkpoints(paths: &[PathBuf], data_dir: &Path, clamp: bool) -> Result<EvalReport> {
    if paths.is_empty() {
        return Err(CoreError::Validation("at least one checkpoint is required".into()));
    }
    let checkpoints: Vec<Checkpoint> = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<_>>()?;
    let first = &checkpoints[0].header;
    for (p, ck) in paths.iter().zip(&checkpoints).skip(1) {
        let h = &ck.header;
        if h.subset != first.subset || h.model.window != first.model.window || h.model.sensors != first.model.sensors {
            return Err(CoreError::Validation(format!(
                "{} was trained on {} (window {}), the first checkpoint on {} (window {})",
                p.display(),
                h.subset,
                h.model.window,
                first.subset,
                first.model.window
            )));
        }
        if h.model != first.model {
            return Err(CoreError::Validation(format!("{} has a different model configuration", p.display())));
        }
    }
    let raw = parse_subset(data_dir, first.subset)?;
    let trials: Vec<Trial<'_>> = paths
        .iter()
        .zip(&checkpoints)
        .map(|(p, ck)| Trial { source: p.display().to_string(), model: &ck.model, stats: &ck.header.norm_stats })
        .collect();
    evaluate(first.subset, &trials, &raw.test, &raw.test_rul, clamp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportSplit {
    /// Padded last window of each test unit.
    Test,
    /// Every sliding window of every training unit.
    TrainAll,
    Train,
    Validation,
}

impl FromStr for ExportSplit {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(ExportSplit::Test),
            "train-all" => Ok(ExportSplit::TrainAll),
            "train" => Ok(ExportSplit::Train),
            "validation" => Ok(ExportSplit::Validation),
            other => Err(CoreError::Validation(format!(
                "unknown split {other:?} (expected test, train-all, train or validation)"
            ))),
        }
    }
}

/// CSV of hidden states, true and predicted RUL for each window of `split`.
pub fn export_hidden(checkpoint: &Checkpoint, data: &PreparedDataset, split: ExportSplit) -> Result<String> {
    if checkpoint.header.norm_stats != data.header.norm_stats || checkpoint.header.model.window != data.header.window {
        return Err(CoreError::Validation(
            "checkpoint was trained with different normalization or window length than this dataset".into(),
        ));
    }
    let windows: Vec<Window> = match split {
        ExportSplit::Test => data.test_windows(),
        ExportSplit::TrainAll => data.all_train_windows()?,
        ExportSplit::Train => data.split()?.0,
        ExportSplit::Validation => data.split()?.1,
    };
    let clamp = checkpoint.header.config.train.clamp_predictions;
    let rows = checkpoint.model.hidden_states(&windows)?;
    let mut out = String::from(HIDDEN_HEADER);
    out.push('\n');
    for (w, (h, pred)) in windows.iter().zip(rows) {
        let pred = if clamp { pred.clamp(0.0, RUL_CAP) } else { pred };
        let _ = writeln!(out, "{},{},{:?},{:?},{:?},{},{:?}", w.unit, w.end_cycle, h[0], h[1], h[2], w.label, pred);
    }
    Ok(out)
}
