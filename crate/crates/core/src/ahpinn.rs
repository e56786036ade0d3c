//! RUL network, input-derivative bundle, hidden-operator network and the
//! physics residual `f = ∂u/∂t - N(H, ∂u/∂H, ∂²u/∂H², ∂³u/∂H³)`.

use hpinn_autodiff::{Graph, Jet3, Tensor, Value};
use rand_chacha::ChaCha8Rng;

use crate::data::RUL_CAP;
use crate::encoder::AttentionBlock;
use crate::error::{CoreError, Result};
use crate::params::{Bound, ParamId, ParamStore};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Number of scalar inputs to the hidden-operator network.
pub const NFNN_FEATURES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the stored running statistics, treated as constants.
    Eval,
}

#[derive(Clone, Debug)]
struct RulLayer {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

/// Batch statistics of one normalization layer, for the running update.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased when the batch has more than one row.
    pub var: Tensor,
}

/// Per-column normalization `x·scale + shift` of one layer.
pub type Affine<'g> = (Value<'g>, Value<'g>);

/// `[H, t] -> affine -> batch norm -> tanh` (x3) `-> affine -> x125`.
#[derive(Clone, Debug)]
pub struct RulNet {
    layers: Vec<RulLayer>,
    head_w: ParamId,
    head_b: ParamId,
}

impl RulNet {
    pub const INPUTS: usize = 4;

    pub fn new(store: &mut ParamStore, width: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = Self::INPUTS;
        for i in 0..depth {
            layers.push(RulLayer {
                w: store.add_linear_weight(format!("rul.l{i}.w"), fan_in, width, rng),
                b: store.add(format!("rul.l{i}.b"), Tensor::zeros(1, width)),
                gamma: store.add(format!("rul.bn{i}.gamma"), Tensor::filled(1, width, 1.0)),
                beta: store.add(format!("rul.bn{i}.beta"), Tensor::zeros(1, width)),
                running_mean: store.add_buffer(format!("rul.bn{i}.running_mean"), Tensor::zeros(1, width)),
                running_var: store.add_buffer(format!("rul.bn{i}.running_var"), Tensor::filled(1, width, 1.0)),
            });
            fan_in = width;
        }
        Self {
            layers,
            head_w: store.add_linear_weight(format!("rul.l{depth}.w"), fan_in, 1, rng),
            head_b: store.add(format!("rul.l{depth}.b"), Tensor::zeros(1, 1)),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Evaluation-mode normalization as a per-column affine map `x·scale + shift`.
    fn frozen_affine<'g>(&self, b: &Bound<'g>, layer: &RulLayer) -> Result<(Value<'g>, Value<'g>)> {
        let g = b.get(layer.gamma).graph();
        let rm = b.get(layer.running_mean);
        let inv_std = b.get(layer.running_var).tensor().map(|v| 1.0 / (v + BN_EPS).sqrt());
        let scale = b.get(layer.gamma).mul(g.constant(inv_std))?;
        let shift = b.get(layer.beta).sub(rm.mul(scale)?)?;
        Ok((scale, shift))
    }

    /// Predictions `B x 1` for inputs `z = [H, t]` of shape `B x 4`.
    pub fn forward<'g>(&self, b: &Bound<'g>, z: Value<'g>, mode: BnMode) -> Result<(Value<'g>, Vec<BatchStats>)> {
        let (out, stats, _) = self.forward_with_norm(b, z, mode)?;
        Ok((out, stats))
    }

    /// Like [`RulNet::forward`], also returning each layer's normalization as an
    /// affine map built from the statistics that were used.
    pub fn forward_with_norm<'g>(
        &self,
        b: &Bound<'g>,
        z: Value<'g>,
        mode: BnMode,
    ) -> Result<(Value<'g>, Vec<BatchStats>, Vec<Affine<'g>>)> {
        if z.cols() != Self::INPUTS {
            return Err(CoreError::Validation(format!("RUL net takes {} inputs, got {}", Self::INPUTS, z.cols())));
        }
        let n = z.rows();
        let mut x = z;
        let mut stats = Vec::new();
        let mut norm = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = x.matmul(b.get(layer.w))?.add_row(b.get(layer.b))?;
            let normed = match mode {
                BnMode::Train => {
                    let mean = a.sum_rows()?.scale(1.0 / n as f64)?;
                    let centered = a.add_row(mean.neg()?)?;
                    let var = centered.mul(centered)?.sum_rows()?.scale(1.0 / n as f64)?;
                    let inv_std = var.add_scalar(BN_EPS)?.powf(-0.5)?;
                    let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                    stats.push(BatchStats { mean: (*mean.tensor()).clone(), var: var.tensor().map(|v| v * unbiased) });
                    let scale = inv_std.mul(b.get(layer.gamma))?;
                    norm.push((scale, b.get(layer.beta).sub(mean.mul(scale)?)?));
                    centered.mul_row(inv_std)?.mul_row(b.get(layer.gamma))?.add_row(b.get(layer.beta))?
                }
                BnMode::Eval => {
                    let (scale, shift) = self.frozen_affine(b, layer)?;
                    norm.push((scale, shift));
                    a.mul_row(scale)?.add_row(shift)?
                }
            };
            x = normed.tanh()?;
            if !x.tensor().is_finite() {
                return Err(CoreError::NonFinite(format!("RUL net hidden layer {i}")));
            }
        }
        let out = x.matmul(b.get(self.head_w))?.add_row(b.get(self.head_b))?.scale(RUL_CAP)?;
        if !out.tensor().is_finite() {
            return Err(CoreError::NonFinite("RUL net output layer".into()));
        }
        Ok((out, stats, norm))
    }

    /// Evaluation-mode forward pass on a jet of the inputs.
    pub fn jet<'g>(&self, b: &Bound<'g>, z: &Jet3<'g>) -> Result<Jet3<'g>> {
        self.jet_with(b, z, None)
    }

    /// Forward pass on a jet with the given per-layer normalization, or the
    /// running statistics when `norm` is `None`. The normalization is constant
    /// along the jet direction.
    pub fn jet_with<'g>(&self, b: &Bound<'g>, z: &Jet3<'g>, norm: Option<&[Affine<'g>]>) -> Result<Jet3<'g>> {
        if let Some(n) = norm {
            if n.len() != self.layers.len() {
                return Err(CoreError::Validation(format!("{} normalization maps for {} layers", n.len(), self.layers.len())));
            }
        }
        let mut x = *z;
        for (i, layer) in self.layers.iter().enumerate() {
            let (scale, shift) = match norm {
                Some(n) => n[i],
                None => self.frozen_affine(b, layer)?,
            };
            x = x
                .matmul_const(b.get(layer.w))?
                .add_row(b.get(layer.b))?
                .mul_row(scale)?
                .add_row(shift)?
                .tanh()?;
        }
        Ok(x.matmul_const(b.get(self.head_w))?.add_row(b.get(self.head_b))?.scale(RUL_CAP)?)
    }

    /// Fold one batch's statistics into the running averages.
    pub fn update_running_stats(&self, store: &mut ParamStore, stats: &[BatchStats]) {
        for (layer, s) in self.layers.iter().zip(stats) {
            let blend = |old: &Tensor, new: &Tensor| old.zip_map(new, |o, n| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n);
            let rm = blend(store.get(layer.running_mean), &s.mean);
            let rv = blend(store.get(layer.running_var), &s.var);
            *store.get_mut(layer.running_mean) = rm;
            *store.get_mut(layer.running_var) = rv;
        }
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }
}

/// A scalar field `u(H, t)` that can be pushed through third-order jets.
/// Inputs are `B x 4` jets of `[H1, H2, H3, t]`; the output is `B x 1`.
pub trait JetFn<'g> {
    fn apply(&self, z: &Jet3<'g>) -> Result<Jet3<'g>>;
}

impl<'g, F: Fn(&Jet3<'g>) -> Result<Jet3<'g>>> JetFn<'g> for F {
    fn apply(&self, z: &Jet3<'g>) -> Result<Jet3<'g>> {
        self(z)
    }
}

/// Pin the lifetimes of a closure so it implements [`JetFn`].
pub fn jet_fn<'g, F: Fn(&Jet3<'g>) -> Result<Jet3<'g>>>(f: F) -> F {
    f
}

/// The RUL net with frozen normalization, as a [`JetFn`].
pub struct RulEval<'a, 'g> {
    pub net: &'a RulNet,
    pub bound: &'a Bound<'g>,
}

impl<'g> JetFn<'g> for RulEval<'_, 'g> {
    fn apply(&self, z: &Jet3<'g>) -> Result<Jet3<'g>> {
        self.net.jet(self.bound, z)
    }
}

/// The RUL net with the normalization of a particular forward pass.
pub struct RulFixedNorm<'a, 'g> {
    pub net: &'a RulNet,
    pub bound: &'a Bound<'g>,
    pub norm: &'a [Affine<'g>],
}

impl<'g> JetFn<'g> for RulFixedNorm<'_, 'g> {
    fn apply(&self, z: &Jet3<'g>) -> Result<Jet3<'g>> {
        self.net.jet_with(self.bound, z, Some(self.norm))
    }
}

/// Input derivatives of `u` per sample. Orders 1 to 3 are pure per-coordinate
/// derivatives along each hidden coordinate.
#[derive(Clone, Copy, Debug)]
pub struct DerivativeBundle<'g> {
    /// `u` itself, `B x 1`.
    pub u: Value<'g>,
    pub du_dt: Value<'g>,
    /// `B x 3` each.
    pub du_dh: Value<'g>,
    pub d2u_dh2: Value<'g>,
    pub d3u_dh3: Value<'g>,
}

impl<'g> DerivativeBundle<'g> {
    /// `[H, du_dH, d2u_dH2, d3u_dH3]` as `B x 12`.
    pub fn features(&self, h: Value<'g>) -> Result<Value<'g>> {
        Ok(h.graph().concat_cols(&[h, self.du_dh, self.d2u_dh2, self.d3u_dh3])?)
    }
}

pub fn compute_derivatives<'g>(h: Value<'g>, t: Value<'g>, u: &impl JetFn<'g>) -> Result<DerivativeBundle<'g>> {
    if h.cols() != 3 || t.cols() != 1 || h.rows() != t.rows() {
        return Err(CoreError::Validation(format!(
            "derivatives need H (B x 3) and t (B x 1), got {}x{} and {}x{}",
            h.rows(),
            h.cols(),
            t.rows(),
            t.cols()
        )));
    }
    let g = h.graph();
    let z = g.concat_cols(&[h, t])?;
    let pass = |dir: usize| -> Result<Jet3<'g>> {
        let out = u.apply(&Jet3::lift(z, dir)?)?;
        if out.shape() != (h.rows(), 1) {
            return Err(CoreError::Validation(format!("jet function must return B x 1, got {:?}", out.shape())));
        }
        Ok(out)
    };
    let time = pass(3)?;
    let along: Vec<Jet3<'g>> = (0..3).map(pass).collect::<Result<_>>()?;
    let gather = |k: usize| g.concat_cols(&[along[0].c[k], along[1].c[k], along[2].c[k]]);
    Ok(DerivativeBundle { u: time.value(), du_dt: time.d1(), du_dh: gather(1)?, d2u_dh2: gather(2)?, d3u_dh3: gather(3)? })
}

#[derive(Clone, Debug)]
enum NfnnBody {
    Attention { emb_w: ParamId, emb_b: ParamId, block: AttentionBlock },
    /// Dense `12 -> d -> d` tanh stack in place of tokens and attention.
    FeedForward { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
}

/// Learns the hidden operator `N` from `H` and the derivative bundle.
#[derive(Clone, Debug)]
pub struct Nfnn {
    width: usize,
    body: NfnnBody,
    head_w: ParamId,
    head_b: ParamId,
}

impl Nfnn {
    /// One token per input scalar, a self-attention block and mean pooling.
    pub fn attention(store: &mut ParamStore, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let emb_w = store.add_xavier("nfnn.embed.w", NFNN_FEATURES, width, 1, width, rng);
        let emb_b = store.add("nfnn.embed.b", Tensor::zeros(NFNN_FEATURES, width));
        let block = AttentionBlock::new(store, "nfnn.block", width, 2 * width, rng);
        Self::with_head(store, width, NfnnBody::Attention { emb_w, emb_b, block }, rng)
    }

    pub fn feed_forward(store: &mut ParamStore, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let body = NfnnBody::FeedForward {
            w1: store.add_linear_weight("nfnn.ff.w1", NFNN_FEATURES, width, rng),
            b1: store.add("nfnn.ff.b1", Tensor::zeros(1, width)),
            w2: store.add_linear_weight("nfnn.ff.w2", width, width, rng),
            b2: store.add("nfnn.ff.b2", Tensor::zeros(1, width)),
        };
        Self::with_head(store, width, body, rng)
    }

    fn with_head(store: &mut ParamStore, width: usize, body: NfnnBody, rng: &mut ChaCha8Rng) -> Self {
        let head_w = store.add_linear_weight("nfnn.head.w", width, 1, rng);
        let head_b = store.add("nfnn.head.b", Tensor::zeros(1, 1));
        Self { width, body, head_w, head_b }
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Embedding `(w, b)` of the token model, each `12 x width`.
    pub fn embedding(&self) -> Option<(ParamId, ParamId)> {
        match &self.body {
            NfnnBody::Attention { emb_w, emb_b, .. } => Some((*emb_w, *emb_b)),
            NfnnBody::FeedForward { .. } => None,
        }
    }

    /// `N` per sample (`B x 1`) from `B x 12` features.
    pub fn forward<'g>(&self, b: &Bound<'g>, features: Value<'g>) -> Result<Value<'g>> {
        let (n, k) = features.shape();
        if k != NFNN_FEATURES {
            return Err(CoreError::Validation(format!("operator network takes {NFNN_FEATURES} features, got {k}")));
        }
        let g = features.graph();
        let pooled = match &self.body {
            NfnnBody::Attention { emb_w, emb_b, block } => {
                let tokens = b
                    .get(*emb_w)
                    .tile_rows(n)?
                    .mul_col(features.reshape(n * NFNN_FEATURES, 1)?)?
                    .add(b.get(*emb_b).tile_rows(n)?)?;
                let out = block.forward(b, tokens, NFNN_FEATURES)?;
                let d = self.width;
                let pool = mean_pool(g, NFNN_FEATURES, d);
                out.reshape(n, NFNN_FEATURES * d)?.matmul(pool)?
            }
            NfnnBody::FeedForward { w1, b1, w2, b2 } => features
                .matmul(b.get(*w1))?
                .add_row(b.get(*b1))?
                .tanh()?
                .matmul(b.get(*w2))?
                .add_row(b.get(*b2))?
                .tanh()?,
        };
        Ok(pooled.matmul(b.get(self.head_w))?.add_row(b.get(self.head_b))?)
    }
}

/// `(tokens·d) x d` matrix averaging `tokens` consecutive width-`d` blocks.
fn mean_pool(g: &Graph, tokens: usize, d: usize) -> Value<'_> {
    g.constant(Tensor::from_fn(tokens * d, d, |r, c| if r % d == c { 1.0 / tokens as f64 } else { 0.0 }))
}

/// Residual `f = du_dt - N` per sample (`B x 1`) with its bundle. `norm`
/// fixes the RUL net's normalization; `None` uses the running statistics.
pub fn physics_residual<'g>(
    b: &Bound<'g>,
    h: Value<'g>,
    t: Value<'g>,
    rul: &RulNet,
    nfnn: &Nfnn,
    norm: Option<&[Affine<'g>]>,
) -> Result<(Value<'g>, DerivativeBundle<'g>)> {
    let bundle = match norm {
        Some(norm) => compute_derivatives(h, t, &RulFixedNorm { net: rul, bound: b, norm })?,
        None => compute_derivatives(h, t, &RulEval { net: rul, bound: b })?,
    };
    let n = nfnn.forward(b, bundle.features(h)?)?;
    Ok((bundle.du_dt.sub(n)?, bundle))
}
