//! Sentence encoders: stacked (local) self-attention and the BiLSTM baseline.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Dropout source threaded through a forward pass; `None` means inference.
pub type DropoutRng<'a> = Option<&'a mut dyn RngCore>;

pub fn reborrow<'b>(rng: &'b mut DropoutRng<'_>) -> Option<&'b mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_inner: usize,
    pub head_dim: usize,
    /// Attention window; `None` is global attention.
    pub window: Option<usize>,
    pub relu_dropout: f64,
    pub attention_dropout: f64,
    pub residual_dropout: f64,
}

impl Default for SanConfig {
    fn default() -> Self {
        SanConfig {
            layers: 2,
            heads: 8,
            d_model: 512,
            d_inner: 2048,
            head_dim: 64,
            window: Some(5),
            relu_dropout: 0.1,
            attention_dropout: 0.1,
            residual_dropout: 0.1,
        }
    }
}

fn check_dropout(name: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} must be in [0, 1), got {p}")));
    }
    Ok(())
}

impl SanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_inner == 0 || self.head_dim == 0 {
            return Err(Error::invalid("SAN dimensions must be positive"));
        }
        if self.heads * self.head_dim != self.d_model {
            return Err(Error::invalid(format!(
                "heads ({}) x head_dim ({}) must equal d_model ({})",
                self.heads, self.head_dim, self.d_model
            )));
        }
        check_dropout("relu_dropout", self.relu_dropout)?;
        check_dropout("attention_dropout", self.attention_dropout)?;
        check_dropout("residual_dropout", self.residual_dropout)
    }

    pub fn without_dropout(&self) -> Self {
        SanConfig {
            relu_dropout: 0.0,
            attention_dropout: 0.0,
            residual_dropout: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub input_dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            layers: 1,
            hidden: 200,
            input_dropout: 0.1,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("LSTM dimensions must be positive"));
        }
        check_dropout("lstm_input_dropout", self.input_dropout)
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Matrix<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-a..a)))
}

/// `(i, j)` is `0` when `|j - i| <= window`, `-inf` otherwise.
pub fn local_mask<T: Scalar>(n: usize, window: usize) -> Matrix<T> {
    Matrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) <= window {
            T::zero()
        } else {
            T::neg_infinity()
        }
    })
}

/// Attention mask for a sequence of `n` rows whose first `length` are real.
///
/// Keys at padded positions are excluded everywhere. Real queries also obey
/// the window; padded queries see every real key so no row is empty.
pub fn sequence_mask<T: Scalar>(n: usize, length: usize, window: Option<usize>) -> Matrix<T> {
    Matrix::from_fn(n, n, |i, j| {
        let visible = j < length && (i >= length || window.map_or(true, |w| i.abs_diff(j) <= w));
        if visible {
            T::zero()
        } else {
            T::neg_infinity()
        }
    })
}

/// Scaled dot-product attention over already projected `q`, `k`, `v`.
/// Returns the output and the weight matrix.
pub fn scaled_dot<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<&Matrix<T>>,
    dropout: f64,
    rng: &mut DropoutRng<'_>,
) -> Result<(NodeId, NodeId)> {
    let dk = g.shape(q).1;
    let scores = g.matmul_nt(q, k);
    let scores = g.scale(scores, T::of(1.0 / (dk as f64).sqrt()));
    let weights = g.masked_softmax(scores, mask, false)?;
    let dropped = g.dropout(weights, dropout, reborrow(rng));
    Ok((g.matmul(dropped, v), weights))
}

/// Single-head attention with learned projections.
pub fn attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    proj: &AttentionProj,
    mask: Option<&Matrix<T>>,
) -> Result<(NodeId, NodeId)> {
    let (wq, wk, wv) = (g.param(proj.wq), g.param(proj.wk), g.param(proj.wv));
    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    scaled_dot(g, q, k, v, mask, 0.0, &mut None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionProj {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadParams {
    /// Each `d_model x d_model`; head `h` owns columns `h*head_dim..(h+1)*head_dim`.
    pub proj: AttentionProj,
    pub wo: ParamId,
}

pub struct MultiHeadOut {
    pub output: NodeId,
    /// Head outputs side by side, before the output projection.
    pub concat: NodeId,
    pub weights: Vec<NodeId>,
}

pub fn multi_head<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    params: &MultiHeadParams,
    mask: Option<&Matrix<T>>,
    config: &SanConfig,
    rng: &mut DropoutRng<'_>,
) -> Result<MultiHeadOut> {
    let p = params.proj;
    let (wq, wk, wv) = (g.param(p.wq), g.param(p.wk), g.param(p.wv));
    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let hd = config.head_dim;
    let mut heads = Vec::with_capacity(config.heads);
    let mut weights = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = g.cols(q, h * hd, hd);
        let kh = g.cols(k, h * hd, hd);
        let vh = g.cols(v, h * hd, hd);
        let (out, w) = scaled_dot(g, qh, kh, vh, mask, config.attention_dropout, rng)?;
        heads.push(out);
        weights.push(w);
    }
    let concat = if heads.len() == 1 { heads[0] } else { g.hcat(&heads) };
    let wo = g.param(params.wo);
    Ok(MultiHeadOut {
        output: g.matmul(concat, wo),
        concat,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Position-wise `relu(x W1 + b1) W2 + b2`.
pub fn ffn<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    params: &FfnParams,
    relu_dropout: f64,
    rng: &mut DropoutRng<'_>,
) -> NodeId {
    let (w1, b1, w2, b2) = (
        g.param(params.w1),
        g.param(params.b1),
        g.param(params.w2),
        g.param(params.b2),
    );
    let hidden = g.matmul(x, w1);
    let hidden = g.add_row(hidden, b1);
    let hidden = g.relu(hidden);
    let hidden = g.dropout(hidden, relu_dropout, reborrow(rng));
    let out = g.matmul(hidden, w2);
    g.add_row(out, b2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

const LN_EPS: f64 = 1e-6;

fn layer_norm<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, p: &LayerNormParams) -> NodeId {
    let normed = g.layer_norm(x, T::of(LN_EPS));
    let gain = g.param(p.gain);
    let bias = g.param(p.bias);
    let scaled = g.mul_row(normed, gain);
    g.add_row(scaled, bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SanLayerParams {
    pub attention: MultiHeadParams,
    pub norm1: LayerNormParams,
    pub ffn: FfnParams,
    pub norm2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SanParams {
    pub input_proj: ParamId,
    pub input_bias: ParamId,
    pub layers: Vec<SanLayerParams>,
}

fn add_norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> LayerNormParams {
    LayerNormParams {
        gain: store.add(format!("{name}.gain"), Matrix::filled(1, d, T::one()), true),
        bias: store.add(format!("{name}.bias"), Matrix::zeros(1, d), true),
    }
}

impl SanParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        config: &SanConfig,
        rng: &mut dyn RngCore,
    ) -> Self {
        let d = config.d_model;
        let input_proj = store.add(format!("{prefix}.input.w"), glorot(d_in, d, rng), true);
        let input_bias = store.add(format!("{prefix}.input.b"), Matrix::zeros(1, d), true);
        let layers = (0..config.layers)
            .map(|l| {
                let n = format!("{prefix}.layer{l}");
                let proj = AttentionProj {
                    wq: store.add(format!("{n}.attn.wq"), glorot(d, d, rng), true),
                    wk: store.add(format!("{n}.attn.wk"), glorot(d, d, rng), true),
                    wv: store.add(format!("{n}.attn.wv"), glorot(d, d, rng), true),
                };
                let wo = store.add(format!("{n}.attn.wo"), glorot(d, d, rng), true);
                let norm1 = add_norm(store, &format!("{n}.norm1"), d);
                let ffn = FfnParams {
                    w1: store.add(format!("{n}.ffn.w1"), glorot(d, config.d_inner, rng), true),
                    b1: store.add(format!("{n}.ffn.b1"), Matrix::zeros(1, config.d_inner), true),
                    w2: store.add(format!("{n}.ffn.w2"), glorot(config.d_inner, d, rng), true),
                    b2: store.add(format!("{n}.ffn.b2"), Matrix::zeros(1, d), true),
                };
                let norm2 = add_norm(store, &format!("{n}.norm2"), d);
                SanLayerParams {
                    attention: MultiHeadParams { proj, wo },
                    norm1,
                    ffn,
                    norm2,
                }
            })
            .collect();
        SanParams {
            input_proj,
            input_bias,
            layers,
        }
    }

    pub fn find<T: Scalar>(store: &ParamStore<T>, prefix: &str, layers: usize) -> Result<Self> {
        let get = |name: String| {
            store
                .find(&name)
                .ok_or_else(|| Error::Archive(format!("missing parameter `{name}`")))
        };
        let norm = |n: String| -> Result<LayerNormParams> {
            Ok(LayerNormParams {
                gain: get(format!("{n}.gain"))?,
                bias: get(format!("{n}.bias"))?,
            })
        };
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let n = format!("{prefix}.layer{l}");
            out.push(SanLayerParams {
                attention: MultiHeadParams {
                    proj: AttentionProj {
                        wq: get(format!("{n}.attn.wq"))?,
                        wk: get(format!("{n}.attn.wk"))?,
                        wv: get(format!("{n}.attn.wv"))?,
                    },
                    wo: get(format!("{n}.attn.wo"))?,
                },
                norm1: norm(format!("{n}.norm1"))?,
                ffn: FfnParams {
                    w1: get(format!("{n}.ffn.w1"))?,
                    b1: get(format!("{n}.ffn.b1"))?,
                    w2: get(format!("{n}.ffn.w2"))?,
                    b2: get(format!("{n}.ffn.b2"))?,
                },
                norm2: norm(format!("{n}.norm2"))?,
            });
        }
        Ok(SanParams {
            input_proj: get(format!("{prefix}.input.w"))?,
            input_bias: get(format!("{prefix}.input.b"))?,
            layers: out,
        })
    }
}

/// Rows `length..` of `x_in` are padding.
pub fn san_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    x_in: NodeId,
    length: usize,
    params: &SanParams,
    config: &SanConfig,
    rng: &mut DropoutRng<'_>,
) -> Result<NodeId> {
    let n = g.shape(x_in).0;
    if length == 0 || length > n {
        return Err(Error::invalid(format!(
            "sequence length {length} with {n} rows"
        )));
    }
    let mask = sequence_mask::<T>(n, length, config.window);
    let w = g.param(params.input_proj);
    let b = g.param(params.input_bias);
    let x = g.matmul(x_in, w);
    let mut x = g.add_row(x, b);
    for layer in &params.layers {
        let attn = multi_head(g, x, &layer.attention, Some(&mask), config, rng)?;
        let a = g.dropout(attn.output, config.residual_dropout, reborrow(rng));
        let res = g.add(x, a);
        x = layer_norm(g, res, &layer.norm1);
        let f = ffn(g, x, &layer.ffn, config.relu_dropout, rng);
        let f = g.dropout(f, config.residual_dropout, reborrow(rng));
        let res = g.add(x, f);
        x = layer_norm(g, res, &layer.norm2);
    }
    Ok(x)
}

/// One direction of one LSTM layer; gate columns are ordered `[i, f, o, c~]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCellParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmParams {
    /// `(forward, backward)` per layer.
    pub layers: Vec<(LstmCellParams, LstmCellParams)>,
}

impl LstmParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        config: &LstmConfig,
        rng: &mut dyn RngCore,
    ) -> Self {
        let h = config.hidden;
        let mut cell = |store: &mut ParamStore<T>, name: String, d: usize| LstmCellParams {
            w: store.add(format!("{name}.w"), glorot(d, 4 * h, rng), true),
            u: store.add(format!("{name}.u"), glorot(h, 4 * h, rng), true),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, 4 * h), true),
        };
        let layers = (0..config.layers)
            .map(|l| {
                let d = if l == 0 { d_in } else { 2 * h };
                (
                    cell(store, format!("{prefix}.layer{l}.fwd"), d),
                    cell(store, format!("{prefix}.layer{l}.bwd"), d),
                )
            })
            .collect();
        LstmParams { layers }
    }

    pub fn find<T: Scalar>(store: &ParamStore<T>, prefix: &str, layers: usize) -> Result<Self> {
        let get = |name: String| {
            store
                .find(&name)
                .ok_or_else(|| Error::Archive(format!("missing parameter `{name}`")))
        };
        let cell = |name: String| -> Result<LstmCellParams> {
            Ok(LstmCellParams {
                w: get(format!("{name}.w"))?,
                u: get(format!("{name}.u"))?,
                b: get(format!("{name}.b"))?,
            })
        };
        let layers = (0..layers)
            .map(|l| {
                Ok((
                    cell(format!("{prefix}.layer{l}.fwd"))?,
                    cell(format!("{prefix}.layer{l}.bwd"))?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(LstmParams { layers })
    }
}

/// Hidden and cell states of one direction, in input order.
pub struct LstmTrace {
    pub hidden: Vec<NodeId>,
    pub cells: Vec<NodeId>,
}

pub fn lstm_direction<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    params: &LstmCellParams,
    reverse: bool,
) -> LstmTrace {
    let n = g.shape(x).0;
    let h_dim = g.params().value(params.u).rows();
    let w = g.param(params.w);
    let u = g.param(params.u);
    let b = g.param(params.b);
    let xw = g.matmul(x, w);
    let xw = g.add_row(xw, b);
    let mut hidden = vec![None; n];
    let mut cells = vec![None; n];
    let mut prev: Option<(NodeId, NodeId)> = None;
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let mut z = g.rows(xw, t, 1);
        if let Some((h_prev, _)) = prev {
            let hu = g.matmul(h_prev, u);
            z = g.add(z, hu);
        }
        let zi = g.cols(z, 0, h_dim);
        let zf = g.cols(z, h_dim, h_dim);
        let zo = g.cols(z, 2 * h_dim, h_dim);
        let zc = g.cols(z, 3 * h_dim, h_dim);
        let i = g.sigmoid(zi);
        let o = g.sigmoid(zo);
        let c_tilde = g.tanh(zc);
        let mut c = g.mul(i, c_tilde);
        if let Some((_, c_prev)) = prev {
            let f = g.sigmoid(zf);
            let kept = g.mul(f, c_prev);
            c = g.add(c, kept);
        }
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        hidden[t] = Some(h);
        cells[t] = Some(c);
        prev = Some((h, c));
    }
    LstmTrace {
        hidden: hidden.into_iter().map(|h| h.expect("filled")).collect(),
        cells: cells.into_iter().map(|c| c.expect("filled")).collect(),
    }
}

/// Each output row is `backward_h ⊕ forward_h`.
pub fn bilstm_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    x_in: NodeId,
    params: &LstmParams,
    config: &LstmConfig,
    rng: &mut DropoutRng<'_>,
) -> Result<NodeId> {
    if g.shape(x_in).0 == 0 {
        return Err(Error::invalid("cannot encode an empty sentence"));
    }
    let mut x = g.dropout(x_in, config.input_dropout, reborrow(rng));
    for (fwd, bwd) in &params.layers {
        let f = lstm_direction(g, x, fwd, false);
        let b = lstm_direction(g, x, bwd, true);
        let fwd_seq = g.vcat(&f.hidden);
        let bwd_seq = g.vcat(&b.hidden);
        x = g.hcat(&[bwd_seq, fwd_seq]);
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncoderConfig {
    San(SanConfig),
    BiLstm(LstmConfig),
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::San(c) => c.validate(),
            EncoderConfig::BiLstm(c) => c.validate(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::San(c) => c.d_model,
            EncoderConfig::BiLstm(c) => c.output_dim(),
        }
    }

    pub fn uses_positional_encoding(&self) -> bool {
        matches!(self, EncoderConfig::San(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderParams {
    San(SanParams),
    BiLstm(LstmParams),
}

pub const ENCODER_PREFIX: &str = "encoder";

impl EncoderParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        d_in: usize,
        config: &EncoderConfig,
        rng: &mut dyn RngCore,
    ) -> Self {
        match config {
            EncoderConfig::San(c) => EncoderParams::San(SanParams::init(store, ENCODER_PREFIX, d_in, c, rng)),
            EncoderConfig::BiLstm(c) => {
                EncoderParams::BiLstm(LstmParams::init(store, ENCODER_PREFIX, d_in, c, rng))
            }
        }
    }

    pub fn find<T: Scalar>(store: &ParamStore<T>, config: &EncoderConfig) -> Result<Self> {
        Ok(match config {
            EncoderConfig::San(c) => EncoderParams::San(SanParams::find(store, ENCODER_PREFIX, c.layers)?),
            EncoderConfig::BiLstm(c) => {
                EncoderParams::BiLstm(LstmParams::find(store, ENCODER_PREFIX, c.layers)?)
            }
        })
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x_in: NodeId,
        config: &EncoderConfig,
        rng: &mut DropoutRng<'_>,
    ) -> Result<NodeId> {
        let n = g.shape(x_in).0;
        match (self, config) {
            (EncoderParams::San(p), EncoderConfig::San(c)) => san_encode(g, x_in, n, p, c, rng),
            (EncoderParams::BiLstm(p), EncoderConfig::BiLstm(c)) => bilstm_encode(g, x_in, p, c, rng),
            _ => Err(Error::invalid("encoder parameters do not match the configuration")),
        }
    }
}
