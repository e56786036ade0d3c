//! Loss terms, adaptive loss balancing, Adam and the epoch loop.

use std::io::Write;
use std::time::Instant;

use hpinn_autodiff::{Graph, Tensor, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ahpinn::BnMode;
use crate::data::{Window, RUL_CAP};
use crate::error::{CoreError, Result};
use crate::metrics::rmse;
use crate::model::Model;
use crate::params::ParamStore;

/// Mean squared error between `B x 1` predictions and labels.
pub fn data_loss<'g>(pred: Value<'g>, labels: Value<'g>) -> Result<Value<'g>> {
    if pred.rows() == 0 {
        return Err(CoreError::Validation("data loss over an empty batch".into()));
    }
    let d = pred.sub(labels)?;
    Ok(d.mul(d)?.mean()?)
}

/// Mean of squared residuals.
pub fn physics_loss<'g>(f: Value<'g>) -> Result<Value<'g>> {
    if f.rows() == 0 {
        return Err(CoreError::Validation("physics loss over an empty batch".into()));
    }
    Ok(f.mul(f)?.mean()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalancerConfig {
    /// Weight on the historical term.
    pub alpha: f64,
    pub temperature: f64,
    /// Probability of looking back to the previous epoch rather than the first.
    pub rho_mean: f64,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self { alpha: 0.999, temperature: 0.1, rho_mean: 0.999 }
    }
}

impl BalancerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            errs.push(format!("balancer.alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            errs.push(format!("balancer.temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.rho_mean) {
            errs.push(format!("balancer.rho_mean must lie in [0, 1], got {}", self.rho_mean));
        }
        errs
    }
}

const LOSS_FLOOR: f64 = 1e-12;

/// Relative loss balancing with random lookback over two loss terms.
#[derive(Clone, Debug)]
pub struct LossBalancer {
    config: BalancerConfig,
    lambdas: [f64; 2],
    initial: Option<[f64; 2]>,
    previous: Option<[f64; 2]>,
    rng: ChaCha8Rng,
}

impl LossBalancer {
    pub fn new(config: BalancerConfig, seed: u64) -> Self {
        Self { config, lambdas: [1.0, 1.0], initial: None, previous: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn lambdas(&self) -> [f64; 2] {
        self.lambdas
    }

    /// `m · softmax_i(L_i(now) / (τ · L_i(then)))` with `m = 2`.
    pub fn relative_weights(&self, now: [f64; 2], then: [f64; 2]) -> [f64; 2] {
        let z = [0, 1].map(|i| now[i] / (self.config.temperature * then[i]));
        let top = z[0].max(z[1]);
        let e = z.map(|v| (v - top).exp());
        let total = e[0] + e[1];
        e.map(|v| 2.0 * v / total)
    }

    /// Fold in one epoch's mean losses, drawing the lookback from the seeded stream.
    pub fn update(&mut self, losses: [f64; 2]) -> [f64; 2] {
        let rho = self.rng.random_bool(self.config.rho_mean);
        self.update_with(losses, rho)
    }

    /// As [`update`](Self::update) with an explicit lookback draw.
    pub fn update_with(&mut self, losses: [f64; 2], rho: bool) -> [f64; 2] {
        let losses = losses.map(|l| {
            if l > LOSS_FLOOR {
                l
            } else {
                log::warn!("loss value {l} clamped to {LOSS_FLOOR} for balancing");
                LOSS_FLOOR
            }
        });
        let (Some(initial), Some(previous)) = (self.initial, self.previous) else {
            self.initial = Some(losses);
            self.previous = Some(losses);
            self.lambdas = [1.0, 1.0];
            return self.lambdas;
        };
        let from_start = self.relative_weights(losses, initial);
        let from_prev = self.relative_weights(losses, previous);
        let (a, r) = (self.config.alpha, if rho { 1.0 } else { 0.0 });
        for i in 0..2 {
            self.lambdas[i] = a * (r * self.lambdas[i] + (1.0 - r) * from_start[i]) + (1.0 - a) * from_prev[i];
        }
        self.previous = Some(losses);
        self.lambdas
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.value.rows(), e.value.cols())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads` is aligned with the store entries;
    /// buffers and unreached parameters carry `None`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(CoreError::Validation("gradient list does not match the parameter store".into()));
        }
        for (e, g) in store.entries().iter().zip(grads) {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(CoreError::NonFiniteGradient(e.name.clone()));
                }
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !e.trainable {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, p) in e.value.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Last epoch (1-based) trained at `lr_initial`.
    pub lr_decay_epoch: usize,
    pub lr_after: f64,
    pub balancer: BalancerConfig,
    /// Abort when validation RMSE exceeds this multiple of the first epoch's ...
    pub divergence_factor: f64,
    /// ... for this many consecutive epochs.
    pub divergence_patience: usize,
    /// Clamp validation predictions to `[0, 125]`.
    pub clamp_predictions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            lr_initial: 1e-3,
            lr_decay_epoch: 50,
            lr_after: 1e-4,
            balancer: BalancerConfig::default(),
            divergence_factor: 10.0,
            divergence_patience: 5,
            clamp_predictions: true,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_decay_epoch {
            self.lr_initial
        } else {
            self.lr_after
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        for (name, v) in [("train.lr_initial", self.lr_initial), ("train.lr_after", self.lr_after)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.divergence_factor > 1.0) {
            errs.push(format!("train.divergence_factor must exceed 1, got {}", self.divergence_factor));
        }
        if self.divergence_patience == 0 {
            errs.push("train.divergence_patience must be at least 1".into());
        }
        errs.extend(self.balancer.validate());
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_data: f64,
    pub l_f: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub val_rmse: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_data: f64,
    pub l_f: f64,
    pub total: f64,
}

/// Build the weighted loss for one batch. `l_f` is zero when the physics
/// pass is disabled.
fn batch_objective<'g>(
    model: &Model,
    g: &'g Graph,
    batch: &[&Window],
    lambdas: [f64; 2],
) -> Result<(Value<'g>, StepLosses, crate::params::Bound<'g>, Vec<crate::ahpinn::BatchStats>)> {
    let b = model.bind(g);
    let physics = model.config.ablation.uses_physics() && lambdas[1] != 0.0;
    let pass = model.forward(&b, batch, BnMode::Train, physics)?;
    let labels = g.constant(Tensor::column(batch.iter().map(|w| w.label).collect()));
    let l_data = data_loss(pass.prediction, labels)?;
    let mut total = l_data.scale(lambdas[0])?;
    let mut l_f_val = 0.0;
    if let Some(f) = pass.residual {
        let l_f = physics_loss(f)?;
        l_f_val = l_f.item();
        total = total.add(l_f.scale(lambdas[1])?)?;
    }
    let losses = StepLosses { l_data: l_data.item(), l_f: l_f_val, total: total.item() };
    if !losses.total.is_finite() {
        return Err(CoreError::NonFinite("loss".into()));
    }
    Ok((total, losses, b, pass.bn_stats))
}

/// Losses of one batch without updating anything.
pub fn batch_losses(model: &Model, batch: &[&Window], lambdas: [f64; 2]) -> Result<StepLosses> {
    let g = Graph::new();
    Ok(batch_objective(model, &g, batch, lambdas)?.1)
}

/// Losses and per-parameter gradients of one batch, in store order.
pub fn batch_gradients(model: &Model, batch: &[&Window], lambdas: [f64; 2]) -> Result<(StepLosses, Vec<Option<Tensor>>)> {
    let g = Graph::new();
    let (total, losses, b, _) = batch_objective(model, &g, batch, lambdas)?;
    let grads = b.collect_gradients(&g.backward(&total)?);
    Ok((losses, grads))
}

/// Forward, backward on `λ1·L_data + λ2·L_f`, Adam update and running-stat update.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &[&Window], lambdas: [f64; 2], lr: f64) -> Result<StepLosses> {
    let g = Graph::new();
    let (total, losses, b, stats) = batch_objective(model, &g, batch, lambdas)?;
    let grads = b.collect_gradients(&g.backward(&total)?);
    drop(b);
    adam.step(&mut model.store, &grads, lr)?;
    model.rul.update_running_stats(&mut model.store, &stats);
    Ok(losses)
}

/// Validation RMSE with optional clamping of predictions.
pub fn validation_rmse(model: &Model, windows: &[Window], clamp: bool) -> Result<f64> {
    let preds = model.predict(windows)?;
    let preds: Vec<f64> = if clamp { preds.into_iter().map(|p| p.clamp(0.0, RUL_CAP)).collect() } else { preds };
    let labels: Vec<f64> = windows.iter().map(|w| w.label).collect();
    rmse(&preds, &labels)
}

/// Flags a run whose validation RMSE stays above `factor` times the first
/// epoch's value for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct DivergenceGuard {
    factor: f64,
    patience: usize,
    baseline: Option<f64>,
    strikes: usize,
}

impl DivergenceGuard {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, baseline: None, strikes: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_rmse: f64) -> Result<()> {
        let limit = self.factor * *self.baseline.get_or_insert(val_rmse);
        self.strikes = if val_rmse > limit || val_rmse.is_nan() { self.strikes + 1 } else { 0 };
        if self.strikes >= self.patience {
            return Err(CoreError::Diverged { epoch, val_rmse, limit });
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub history: Vec<EpochRecord>,
}

/// A failed run with the history recorded up to the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: CoreError,
    pub history: Vec<EpochRecord>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded epochs)", self.error, self.history.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Train `model` in place for one trial. Each epoch's record is appended to
/// `log` as a JSON line when given.
pub fn train(
    model: &mut Model,
    train_set: &[Window],
    val_set: &[Window],
    config: &TrainConfig,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let mut history = Vec::new();
    let fail = |error: CoreError, history: &Vec<EpochRecord>| TrainFailure { error, history: history.clone() };
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(fail(CoreError::Config(errs), &history));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(fail(CoreError::Validation("training and validation sets must be non-empty".into()), &history));
    }
    let physics = model.config.ablation.uses_physics();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut balancer = LossBalancer::new(config.balancer.clone(), seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(&model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(ParamStore, usize, f64)> = None;
    let mut guard = DivergenceGuard::new(config.divergence_factor, config.divergence_patience);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate(epoch);
        let lambdas = if physics { balancer.lambdas() } else { [1.0, 0.0] };
        order.shuffle(&mut shuffle_rng);
        let (mut sum_data, mut sum_f) = (0.0, 0.0);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Window> = idx.iter().map(|&i| &train_set[i]).collect();
            let step = train_step(model, &mut adam, &batch, lambdas, lr).map_err(|e| fail(e, &history))?;
            sum_data += step.l_data * batch.len() as f64;
            sum_f += step.l_f * batch.len() as f64;
        }
        let n = train_set.len() as f64;
        let (l_data, l_f) = (sum_data / n, sum_f / n);
        if physics {
            balancer.update([l_data, l_f]);
        }
        let val_rmse = validation_rmse(model, val_set, config.clamp_predictions).map_err(|e| fail(e, &history))?;
        let record = EpochRecord {
            epoch,
            l_data,
            l_f,
            lambda1: lambdas[0],
            lambda2: lambdas[1],
            lr,
            val_rmse,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: l_data {l_data:.4} l_f {l_f:.4e} lambda ({:.4}, {:.4}) val_rmse {val_rmse:.4}",
            lambdas[0],
            lambdas[1]
        );
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("epoch record serializes");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| {
                fail(CoreError::Io { path: "<history log>".into(), source: e }, &history)
            })?;
        }
        history.push(record);

        if best.as_ref().is_none_or(|(_, _, r)| val_rmse < *r) {
            best = Some((model.store.clone(), epoch, val_rmse));
        }
        guard.observe(epoch, val_rmse).map_err(|e| fail(e, &history))?;
    }
    let (best, best_epoch, best_val_rmse) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, best_epoch, best_val_rmse, history })
}
