//! Error metrics and the test protocol over trained checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{apply_normalization, drop_constant_sensors, test_last_window, NormStats, Subset, UnitSeries, RUL_CAP};
use crate::error::{CoreError, Result};
use crate::model::Model;

fn check_pair(pred: &[f64], labels: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(CoreError::Validation("metric over an empty set".into()));
    }
    if pred.len() != labels.len() {
        return Err(CoreError::Validation(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(pred, labels)?;
    let sse: f64 = pred.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Penalty for one error `d = prediction - label`; late predictions cost more.
pub fn score_term(d: f64) -> f64 {
    if d < 0.0 {
        (-d / 13.0).exp() - 1.0
    } else {
        (d / 10.0).exp() - 1.0
    }
}

pub fn nasa_score(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(pred, labels)?;
    Ok(pred.iter().zip(labels).map(|(p, l)| score_term(p - l)).sum())
}

pub fn clamp_rul(pred: &[f64]) -> Vec<f64> {
    pred.iter().map(|p| p.clamp(0.0, RUL_CAP)).collect()
}

/// RMSE of always predicting the mean label.
pub fn mean_label_rmse(labels: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(CoreError::Validation("metric over an empty set".into()));
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    rmse(&vec![mean; labels.len()], labels)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Where the trial came from, usually a checkpoint path.
    pub source: String,
    pub rmse: f64,
    pub score: f64,
    /// Per-unit predictions, aligned with [`EvalReport::units`].
    pub predictions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset: Subset,
    pub clamped: bool,
    pub units: Vec<u32>,
    /// Capped true RUL per unit.
    pub true_rul: Vec<f64>,
    pub trials: Vec<TrialResult>,
    pub mean_rmse: f64,
    /// Sample standard deviation across trials; zero for one trial.
    pub std_rmse: f64,
    pub mean_score: f64,
    pub std_score: f64,
}

/// One trained trial to evaluate.
pub struct Trial<'a> {
    pub source: String,
    pub model: &'a Model,
    pub stats: &'a NormStats,
}

/// Predict the last (padded) window of every raw test unit with each trial.
/// Each trial normalizes the test data with its own statistics.
pub fn evaluate(
    subset: Subset,
    trials: &[Trial<'_>],
    raw_test: &[UnitSeries],
    test_rul: &[u32],
    clamp: bool,
) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(CoreError::Validation("no trials to evaluate".into()));
    }
    if raw_test.len() != test_rul.len() {
        return Err(CoreError::Validation(format!(
            "{} test units but {} RUL values",
            raw_test.len(),
            test_rul.len()
        )));
    }
    let kept = drop_constant_sensors(raw_test)?;
    let units: Vec<u32> = kept.iter().map(|u| u.unit).collect();
    let true_rul: Vec<f64> = test_rul.iter().map(|&r| RUL_CAP.min(r as f64)).collect();
    let mut results = Vec::with_capacity(trials.len());
    for trial in trials {
        let normalized = apply_normalization(&kept, trial.stats)?;
        let window = trial.model.config.window;
        let windows: Vec<_> =
            normalized.iter().zip(test_rul).map(|(u, &r)| test_last_window(u, window, r, trial.stats)).collect();
        let raw = trial.model.predict(&windows)?;
        let predictions = if clamp { clamp_rul(&raw) } else { raw };
        results.push(TrialResult {
            source: trial.source.clone(),
            rmse: rmse(&predictions, &true_rul)?,
            score: nasa_score(&predictions, &true_rul)?,
            predictions,
        });
    }
    let (mean_rmse, std_rmse) = mean_std(&results.iter().map(|t| t.rmse).collect::<Vec<_>>());
    let (mean_score, std_score) = mean_std(&results.iter().map(|t| t.score).collect::<Vec<_>>());
    Ok(EvalReport { subset, clamped: clamp, units, true_rul, trials: results, mean_rmse, std_rmse, mean_score, std_score })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, body + "\n").map_err(|e| CoreError::io(path, e))
    }

    /// `unit,true_rul,pred_rul_1,...,pred_rul_n`, one row per test unit.
    pub fn to_unit_csv(&self) -> String {
        let mut out = String::from("unit,true_rul");
        for i in 1..=self.trials.len() {
            let _ = write!(out, ",pred_rul_{i}");
        }
        out.push('\n');
        for (k, unit) in self.units.iter().enumerate() {
            let _ = write!(out, "{unit},{}", self.true_rul[k]);
            for t in &self.trials {
                let _ = write!(out, ",{}", t.predictions[k]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_unit_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_unit_csv()).map_err(|e| CoreError::io(path, e))
    }

    /// Human-readable per-trial and mean lines.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.trials.iter().enumerate() {
            let _ = writeln!(out, "trial {} ({}): rmse {:.4} score {:.2}", i + 1, t.source, t.rmse, t.score);
        }
        let _ = writeln!(
            out,
            "{} mean over {} trial(s): rmse {:.4} (std {:.4}) score {:.2} (std {:.2})",
            self.subset,
            self.trials.len(),
            self.mean_rmse,
            self.std_rmse,
            self.mean_score,
            self.std_score
        );
        out
    }
}
