//! The full predictor: encoder, RUL net and (optionally) the operator network.

use std::fmt;
use std::str::FromStr;

use hpinn_autodiff::{Graph, Tensor, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ahpinn::{physics_residual, BatchStats, BnMode, Nfnn, RulNet};
use crate::data::Window;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "full")]
    Full,
    /// Time-step attention only.
    M1,
    /// Sensor attention only.
    M2,
    /// Operator network without attention.
    M3,
    /// No physics term.
    #[serde(rename = "no_ahpinn")]
    NoAhpinn,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Full, Ablation::M1, Ablation::M2, Ablation::M3, Ablation::NoAhpinn];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::M1 => "M1",
            Ablation::M2 => "M2",
            Ablation::M3 => "M3",
            Ablation::NoAhpinn => "no_ahpinn",
        }
    }

    pub fn uses_physics(self) -> bool {
        self != Ablation::NoAhpinn
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CoreError::Validation(format!("unknown ablation {s:?} (expected full, M1, M2, M3 or no_ahpinn)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub window: usize,
    pub sensors: usize,
    pub d_model: usize,
    pub ffn_width: usize,
    pub rul_width: usize,
    pub rul_depth: usize,
    pub nfnn_width: usize,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn new(window: usize, sensors: usize, ablation: Ablation) -> Self {
        Self { window, sensors, d_model: 32, ffn_width: 64, rul_width: 10, rul_depth: 3, nfnn_width: 16, ablation }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            ffn_width: self.ffn_width,
            time_branch: self.ablation != Ablation::M2,
            sensor_branch: self.ablation != Ablation::M1,
            ..EncoderConfig::new(self.window, self.sensors)
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.encoder_config().validate();
        if self.rul_width == 0 || self.rul_depth == 0 {
            errs.push("rul_width and rul_depth must be positive".into());
        }
        if self.nfnn_width == 0 {
            errs.push("nfnn_width must be positive".into());
        }
        errs
    }
}

/// Outputs of one batched forward pass.
pub struct ForwardPass<'g> {
    /// `B x 3`.
    pub hidden: Value<'g>,
    /// `B x 1` normalized end cycles.
    pub t: Value<'g>,
    /// `B x 1` predicted RUL (unclamped).
    pub prediction: Value<'g>,
    pub bn_stats: Vec<BatchStats>,
    /// `B x 1` physics residual, when requested and enabled.
    pub residual: Option<Value<'g>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub rul: RulNet,
    pub nfnn: Option<Nfnn>,
}

/// Windows per graph when predicting.
const PREDICT_CHUNK: usize = 256;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(CoreError::Config(errs));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder_config(), &mut store, &mut rng)?;
        let rul = RulNet::new(&mut store, config.rul_width, config.rul_depth, &mut rng);
        let nfnn = match config.ablation {
            Ablation::NoAhpinn => None,
            Ablation::M3 => Some(Nfnn::feed_forward(&mut store, config.nfnn_width, &mut rng)),
            _ => Some(Nfnn::attention(&mut store, config.nfnn_width, &mut rng)),
        };
        Ok(Self { config, store, encoder, rul, nfnn })
    }

    /// Rebuild the architecture for `config` and adopt saved parameter values.
    /// Names and shapes must match entry for entry.
    pub fn with_parameters(config: ModelConfig, saved: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if saved.len() != model.store.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                model.store.len(),
                saved.len()
            )));
        }
        for (entry, (name, value)) in model.store.entries_mut().iter_mut().zip(saved) {
            if entry.name != name || entry.value.shape() != value.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "array {name} {:?} does not match {} {:?}",
                    value.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
            entry.value = value;
        }
        Ok(model)
    }

    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        self.store.bind(graph)
    }

    /// The physics residual uses the same normalization statistics as the
    /// prediction, held constant along the input derivatives.
    pub fn forward<'g>(&self, b: &Bound<'g>, windows: &[&Window], mode: BnMode, physics: bool) -> Result<ForwardPass<'g>> {
        let xs: Vec<&Tensor> = windows.iter().map(|w| &w.x).collect();
        let hidden = self.encoder.encode(b, &xs)?;
        let g = hidden.graph();
        let t = g.constant(Tensor::column(windows.iter().map(|w| w.t_norm).collect()));
        let z = g.concat_cols(&[hidden, t])?;
        let (prediction, bn_stats, norm) = self.rul.forward_with_norm(b, z, mode)?;
        let residual = match (&self.nfnn, physics) {
            (Some(nfnn), true) => {
                let (f, _) = physics_residual(b, hidden, t, &self.rul, nfnn, Some(&norm))?;
                if !f.tensor().is_finite() {
                    return Err(CoreError::NonFinite("physics residual".into()));
                }
                Some(f)
            }
            _ => None,
        };
        Ok(ForwardPass { hidden, t, prediction, bn_stats, residual })
    }

    /// Evaluation-mode predictions, unclamped.
    pub fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let g = Graph::new();
            let b = self.bind(&g);
            let refs: Vec<&Window> = chunk.iter().collect();
            let pass = self.forward(&b, &refs, BnMode::Eval, false)?;
            out.extend_from_slice(pass.prediction.tensor().data());
        }
        Ok(out)
    }

    /// Hidden state and evaluation-mode prediction per window.
    pub fn hidden_states(&self, windows: &[Window]) -> Result<Vec<([f64; 3], f64)>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let g = Graph::new();
            let b = self.bind(&g);
            let refs: Vec<&Window> = chunk.iter().collect();
            let pass = self.forward(&b, &refs, BnMode::Eval, false)?;
            let (h, p) = (pass.hidden.tensor(), pass.prediction.tensor());
            for r in 0..chunk.len() {
                out.push(([h.get(r, 0), h.get(r, 1), h.get(r, 2)], p.get(r, 0)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(t: usize, s: usize, shift: f64) -> Window {
        Window {
            unit: 1,
            x: Tensor::from_fn(t, s, |r, c| ((r * s + c) as f64 * 0.37 + shift).sin() * 0.5 + 0.5),
            end_cycle: 50,
            t_norm: 0.25,
            label: 80.0,
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!("M4".parse::<Ablation>().is_err());
    }

    #[test]
    fn ablations_shape_the_architecture() {
        let m1 = Model::new(ModelConfig::new(8, 5, Ablation::M1), 1).unwrap();
        assert!(m1.encoder.sensor_block.is_none() && m1.encoder.time_block.is_some());
        let m2 = Model::new(ModelConfig::new(8, 5, Ablation::M2), 1).unwrap();
        assert!(m2.encoder.time_block.is_none() && m2.encoder.sensor_block.is_some());
        let m3 = Model::new(ModelConfig::new(8, 5, Ablation::M3), 1).unwrap();
        assert!(m3.nfnn.as_ref().unwrap().embedding().is_none());
        let none = Model::new(ModelConfig::new(8, 5, Ablation::NoAhpinn), 1).unwrap();
        assert!(none.nfnn.is_none());
        assert!(none.store.find("nfnn.head.w").is_none());
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::new(6, 4, Ablation::Full);
        let a = Model::new(cfg.clone(), 9).unwrap();
        let b = Model::new(cfg.clone(), 9).unwrap();
        let c = Model::new(cfg, 10).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn predictions_are_deterministic_and_chunk_independent() {
        let model = Model::new(ModelConfig::new(6, 4, Ablation::Full), 2).unwrap();
        let ws: Vec<Window> = (0..5).map(|i| window(6, 4, i as f64)).collect();
        let all = model.predict(&ws).unwrap();
        assert_eq!(all, model.predict(&ws).unwrap());
        for (i, w) in ws.iter().enumerate() {
            let single = model.predict(std::slice::from_ref(w)).unwrap();
            assert!((single[0] - all[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn with_parameters_checks_layout() {
        let cfg = ModelConfig::new(6, 4, Ablation::Full);
        let model = Model::new(cfg.clone(), 3).unwrap();
        let saved: Vec<(String, Tensor)> =
            model.store.entries().iter().map(|e| (e.name.clone(), e.value.clone())).collect();
        let back = Model::with_parameters(cfg.clone(), saved.clone()).unwrap();
        assert_eq!(back.store, model.store);
        let mut wrong = saved;
        wrong.pop();
        assert!(Model::with_parameters(cfg, wrong).is_err());
    }

    #[test]
    fn backward_reaches_every_trainable_parameter() {
        let model = Model::new(ModelConfig::new(6, 4, Ablation::Full), 4).unwrap();
        let ws: Vec<Window> = (0..3).map(|i| window(6, 4, i as f64 * 0.7)).collect();
        let refs: Vec<&Window> = ws.iter().collect();
        let g = Graph::new();
        let b = model.bind(&g);
        let pass = model.forward(&b, &refs, BnMode::Train, true).unwrap();
        let f = pass.residual.unwrap();
        let loss = pass.prediction.mul(pass.prediction).unwrap().mean().unwrap().add(f.mul(f).unwrap().mean().unwrap()).unwrap();
        let grads = b.collect_gradients(&g.backward(&loss).unwrap());
        for (e, gr) in model.store.entries().iter().zip(grads) {
            if e.trainable {
                let norm: f64 = gr.unwrap().data().iter().map(|v| v.abs()).sum();
                assert!(norm > 0.0, "{} has zero gradient", e.name);
            }
        }
    }
}
