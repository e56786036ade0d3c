//! Spatio-temporal attention encoder: window `T x S` to a 3-dimensional hidden state.
//!
//! Windows are processed in batches. Token matrices of all windows in a batch
//! are stacked vertically (`B·N x D`) so embeddings, projections, layer norms
//! and feed-forward layers run as single matmuls; attention itself is applied
//! per window on row slices.

use hpinn_autodiff::{Tensor, Value};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::{Bound, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenAxis {
    /// One token per sensor, built from its length-`T` history.
    Sensor,
    /// One token per time step, built from its `S` sensor readings.
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub window: usize,
    pub sensors: usize,
    pub d_model: usize,
    pub ffn_width: usize,
    pub hidden_dim: usize,
    pub fusion_channels: usize,
    pub time_branch: bool,
    pub sensor_branch: bool,
}

impl EncoderConfig {
    pub fn new(window: usize, sensors: usize) -> Self {
        Self {
            window,
            sensors,
            d_model: 32,
            ffn_width: 64,
            hidden_dim: 3,
            fusion_channels: 3,
            time_branch: true,
            sensor_branch: true,
        }
    }

    /// Rows of the fused feature map and span of the fusion kernel.
    pub fn fused_rows(&self) -> usize {
        let t = if self.time_branch { self.window } else { 0 };
        let s = if self.sensor_branch { self.sensors } else { 0 };
        t + s
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.window == 0 || self.sensors == 0 {
            errs.push(format!("window ({}) and sensor count ({}) must be positive", self.window, self.sensors));
        }
        if self.d_model == 0 || self.ffn_width == 0 {
            errs.push("d_model and ffn_width must be positive".into());
        }
        if self.hidden_dim != 3 {
            errs.push(format!("hidden_dim must be 3, got {}", self.hidden_dim));
        }
        if self.fusion_channels != 3 {
            errs.push(format!("fusion_channels must be 3, got {}", self.fusion_channels));
        }
        if !self.time_branch && !self.sensor_branch {
            errs.push("at least one attention branch must be enabled".into());
        }
        errs
    }
}

/// Self-attention sublayer followed by a feed-forward sublayer, each with a
/// residual connection and layer norm.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub d_model: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            d_model: d,
            wq: store.add_linear_weight(format!("{prefix}.wq"), d, d, rng),
            wk: store.add_linear_weight(format!("{prefix}.wk"), d, d, rng),
            wv: store.add_linear_weight(format!("{prefix}.wv"), d, d, rng),
            ffn_w1: store.add_linear_weight(format!("{prefix}.ffn.w1"), d, ffn, rng),
            ffn_b1: store.add(format!("{prefix}.ffn.b1"), Tensor::zeros(1, ffn)),
            ffn_w2: store.add_linear_weight(format!("{prefix}.ffn.w2"), ffn, d, rng),
            ffn_b2: store.add(format!("{prefix}.ffn.b2"), Tensor::zeros(1, d)),
            ln1_gain: store.add(format!("{prefix}.ln1.gain"), Tensor::filled(1, d, 1.0)),
            ln1_bias: store.add(format!("{prefix}.ln1.bias"), Tensor::zeros(1, d)),
            ln2_gain: store.add(format!("{prefix}.ln2.gain"), Tensor::filled(1, d, 1.0)),
            ln2_bias: store.add(format!("{prefix}.ln2.bias"), Tensor::zeros(1, d)),
        }
    }

    /// `tokens` stacks `tokens.rows() / seq_len` sequences of `seq_len` rows.
    pub fn forward<'g>(&self, b: &Bound<'g>, tokens: Value<'g>, seq_len: usize) -> Result<Value<'g>> {
        Ok(self.forward_traced(b, tokens, seq_len)?.output)
    }

    pub fn forward_traced<'g>(&self, b: &Bound<'g>, tokens: Value<'g>, seq_len: usize) -> Result<AttentionTrace<'g>> {
        let (rows, d) = tokens.shape();
        if seq_len == 0 || rows % seq_len != 0 || d != self.d_model {
            return Err(CoreError::Validation(format!(
                "attention block expects B·{seq_len} x {} tokens, got {rows}x{d}",
                self.d_model
            )));
        }
        let g = tokens.graph();
        let q = tokens.matmul(b.get(self.wq))?;
        let k = tokens.matmul(b.get(self.wk))?;
        let v = tokens.matmul(b.get(self.wv))?;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();

        let mut heads = Vec::with_capacity(rows / seq_len);
        let mut probs = Vec::with_capacity(rows / seq_len);
        for s in 0..rows / seq_len {
            let r = s * seq_len..(s + 1) * seq_len;
            let (qs, ks, vs) = (q.slice_rows(r.clone())?, k.slice_rows(r.clone())?, v.slice_rows(r)?);
            let p = qs.matmul(ks.t()?)?.scale(inv_sqrt_d)?.softmax_rows()?;
            heads.push(p.matmul(vs)?);
            probs.push(p);
        }
        let attention = if heads.len() == 1 { heads[0] } else { g.concat_rows(&heads)? };

        let sub1 = layer_norm(tokens.add(attention)?, b.get(self.ln1_gain), b.get(self.ln1_bias))?;
        let ffn = sub1
            .matmul(b.get(self.ffn_w1))?
            .add_row(b.get(self.ffn_b1))?
            .relu()?
            .matmul(b.get(self.ffn_w2))?
            .add_row(b.get(self.ffn_b2))?;
        let output = layer_norm(sub1.add(ffn)?, b.get(self.ln2_gain), b.get(self.ln2_bias))?;
        Ok(AttentionTrace { output, attention, probabilities: probs })
    }
}

pub struct AttentionTrace<'g> {
    pub output: Value<'g>,
    /// `softmax(QKᵀ/√d)·V` before the residual.
    pub attention: Value<'g>,
    /// One `N x N` attention matrix per sequence.
    pub probabilities: Vec<Value<'g>>,
}

pub fn layer_norm<'g>(x: Value<'g>, gain: Value<'g>, bias: Value<'g>) -> Result<Value<'g>> {
    Ok(x.normalize_rows(LAYER_NORM_EPS)?.mul_row(gain)?.add_row(bias)?)
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Embedding {
    fn new(store: &mut ParamStore, prefix: &str, input: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add_linear_weight(format!("{prefix}.w"), input, d, rng),
            bias: store.add(format!("{prefix}.b"), Tensor::zeros(1, d)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fusion {
    /// `channels x fused_rows`: one `(T+S) x 1` kernel per output channel.
    pub kernel: ParamId,
    /// `channels x 1`.
    pub kernel_bias: ParamId,
    pub se_w1: ParamId,
    pub se_b1: ParamId,
    pub se_w2: ParamId,
    pub se_b2: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Intermediate values of the fusion stage, batched over windows.
pub struct FusionTrace<'g> {
    /// `B x (channels·D)`, convolution output flattened channel-major.
    pub conv: Value<'g>,
    /// `B x channels` excitation weights.
    pub channel_scales: Value<'g>,
    /// `B x hidden_dim`.
    pub hidden: Value<'g>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub sensor_embed: Option<Embedding>,
    pub time_embed: Option<Embedding>,
    pub sensor_block: Option<AttentionBlock>,
    pub time_block: Option<AttentionBlock>,
    pub fusion: Fusion,
}

impl Encoder {
    pub fn new(config: EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(CoreError::Config(errs));
        }
        let (t, s, d, f) = (config.window, config.sensors, config.d_model, config.ffn_width);
        let (sensor_embed, sensor_block) = if config.sensor_branch {
            (
                Some(Embedding::new(store, "encoder.sensor.embed", t, d, rng)),
                Some(AttentionBlock::new(store, "encoder.sensor.block", d, f, rng)),
            )
        } else {
            (None, None)
        };
        let (time_embed, time_block) = if config.time_branch {
            (
                Some(Embedding::new(store, "encoder.time.embed", s, d, rng)),
                Some(AttentionBlock::new(store, "encoder.time.block", d, f, rng)),
            )
        } else {
            (None, None)
        };
        let (c, r, h) = (config.fusion_channels, config.fused_rows(), config.hidden_dim);
        let fusion = Fusion {
            kernel: store.add_xavier("encoder.fusion.kernel", c, r, r, c * r, rng),
            kernel_bias: store.add("encoder.fusion.kernel_bias", Tensor::zeros(c, 1)),
            se_w1: store.add_linear_weight("encoder.fusion.se.w1", c, c, rng),
            se_b1: store.add("encoder.fusion.se.b1", Tensor::zeros(1, c)),
            se_w2: store.add_linear_weight("encoder.fusion.se.w2", c, c, rng),
            se_b2: store.add("encoder.fusion.se.b2", Tensor::zeros(1, c)),
            out_w: store.add_linear_weight("encoder.fusion.out.w", c * d, h, rng),
            out_b: store.add("encoder.fusion.out.b", Tensor::zeros(1, h)),
        };
        Ok(Self { config, sensor_embed, time_embed, sensor_block, time_block, fusion })
    }

    fn check_window(&self, x: &Tensor) -> Result<()> {
        let want = (self.config.window, self.config.sensors);
        if x.shape() != want {
            return Err(CoreError::Validation(format!(
                "window is {}x{}, encoder expects {}x{}",
                x.rows(),
                x.cols(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    /// Stacked token matrix for `windows` along `axis`: `B·S x D` for
    /// sensor tokens, `B·T x D` for time-step tokens.
    pub fn embed_tokens<'g>(&self, b: &Bound<'g>, windows: &[&Tensor], axis: TokenAxis) -> Result<Value<'g>> {
        for w in windows {
            self.check_window(w)?;
        }
        let (embed, input) = match axis {
            TokenAxis::Sensor => {
                let transposed: Vec<Tensor> = windows.iter().map(|w| w.transpose()).collect();
                (&self.sensor_embed, Tensor::concat_rows(&transposed.iter().collect::<Vec<_>>()))
            }
            TokenAxis::Time => (&self.time_embed, Tensor::concat_rows(windows)),
        };
        let embed = embed
            .as_ref()
            .ok_or_else(|| CoreError::Validation(format!("{axis:?} branch is disabled in this encoder")))?;
        let g = b.get(embed.weight).graph();
        Ok(g.constant(input).matmul(b.get(embed.weight))?.add_row(b.get(embed.bias))?)
    }

    /// Concatenate per-window branch outputs (time rows first), convolve,
    /// reweight channels and project to the hidden state.
    pub fn fuse_features<'g>(
        &self,
        b: &Bound<'g>,
        f_s: Option<Value<'g>>,
        f_t: Option<Value<'g>>,
        batch: usize,
    ) -> Result<FusionTrace<'g>> {
        let cfg = &self.config;
        let (d, c) = (cfg.d_model, cfg.fusion_channels);
        let parts: Vec<(Value<'g>, usize)> =
            [(f_t, cfg.window), (f_s, cfg.sensors)].into_iter().filter_map(|(v, n)| v.map(|v| (v, n))).collect();
        let per_window: usize = parts.iter().map(|(_, n)| n).sum();
        if per_window != cfg.fused_rows() {
            return Err(CoreError::Validation(format!(
                "fused feature map has {per_window} rows per window, kernel spans {}",
                cfg.fused_rows()
            )));
        }
        for (v, n) in &parts {
            if v.shape() != (batch * n, d) {
                return Err(CoreError::Validation(format!(
                    "branch output is {}x{}, expected {}x{d}",
                    v.rows(),
                    v.cols(),
                    batch * n
                )));
            }
        }
        let g = parts[0].0.graph();
        let kernel = b.get(self.fusion.kernel);
        let kernel_bias = b.get(self.fusion.kernel_bias).broadcast(c, d)?;

        let mut flat = Vec::with_capacity(batch);
        for w in 0..batch {
            let slices: Vec<Value<'g>> =
                parts.iter().map(|(v, n)| v.slice_rows(w * n..(w + 1) * n)).collect::<Result<_, _>>()?;
            let fused = if slices.len() == 1 { slices[0] } else { g.concat_rows(&slices)? };
            let conv = kernel.matmul(fused)?.add(kernel_bias)?;
            flat.push(conv.reshape(1, c * d)?);
        }
        let conv = if batch == 1 { flat[0] } else { g.concat_rows(&flat)? };

        // Squeeze: channel means over D. Excitation: two 3→3 affines.
        let avg = g.constant(Tensor::from_fn(c * d, c, |r, k| if r / d == k { 1.0 / d as f64 } else { 0.0 }));
        let expand = g.constant(Tensor::from_fn(c, c * d, |k, r| if r / d == k { 1.0 } else { 0.0 }));
        let squeezed = conv.matmul(avg)?;
        let excite = squeezed.matmul(b.get(self.fusion.se_w1))?.add_row(b.get(self.fusion.se_b1))?.relu()?;
        let channel_scales =
            excite.matmul(b.get(self.fusion.se_w2))?.add_row(b.get(self.fusion.se_b2))?.sigmoid()?;
        let scaled = conv.mul(channel_scales.matmul(expand)?)?;
        let hidden = scaled.matmul(b.get(self.fusion.out_w))?.add_row(b.get(self.fusion.out_b))?;
        Ok(FusionTrace { conv, channel_scales, hidden })
    }

    /// Hidden states `B x 3` for a batch of windows.
    pub fn encode<'g>(&self, b: &Bound<'g>, windows: &[&Tensor]) -> Result<Value<'g>> {
        Ok(self.encode_traced(b, windows)?.hidden)
    }

    pub fn encode_traced<'g>(&self, b: &Bound<'g>, windows: &[&Tensor]) -> Result<FusionTrace<'g>> {
        if windows.is_empty() {
            return Err(CoreError::Validation("cannot encode an empty batch".into()));
        }
        let f_s = match &self.sensor_block {
            Some(block) => {
                let tokens = self.embed_tokens(b, windows, TokenAxis::Sensor)?;
                Some(block.forward(b, tokens, self.config.sensors)?)
            }
            None => None,
        };
        let f_t = match &self.time_block {
            Some(block) => {
                let tokens = self.embed_tokens(b, windows, TokenAxis::Time)?;
                Some(block.forward(b, tokens, self.config.window)?)
            }
            None => None,
        };
        let trace = self.fuse_features(b, f_s, f_t, windows.len())?;
        if !trace.hidden.tensor().is_finite() {
            return Err(CoreError::NonFinite("encoder".into()));
        }
        Ok(trace)
    }
}
