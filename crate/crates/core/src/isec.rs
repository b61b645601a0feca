//! Image segment encoder with contextual attention.
//!
//! The frame-embedding sequence is prefixed with a learned CLS token, summed
//! with sinusoidal position codes and passed through multi-head attention
//! blocks of the form `LN(x + Concat(head_1, ..., head_n) W_O)`.

use ndarray::{s, concatenate, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::nn::{
    apply_mask, glorot, layer_norm_backward, layer_norm_forward, masked_softmax_rows,
    softmax_rows_backward, ForwardMode, LayerNormCache,
};
use crate::params::{ParamGroup, ParamSink, ParamSinkMut};
use crate::scalar::Scalar;

/// Width, head count and dropout of an attention block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub dim: usize,
    pub num_heads: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_dropout() -> f64 {
    0.2
}

impl AttentionConfig {
    pub fn new(dim: usize, num_heads: usize) -> Result<Self> {
        let cfg = Self {
            dim,
            num_heads,
            dropout_rate: default_dropout(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of num_heads {}",
                self.dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }
}

/// Sinusoidal position codes: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<F: Scalar>(seq_len: usize, dim: usize) -> Result<Array2<F>> {
    if seq_len == 0 {
        return Err(Error::Empty("positional encoding needs seq_len >= 1".into()));
    }
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {dim}"
        )));
    }
    Ok(Array2::from_shape_fn((seq_len, dim), |(pos, j)| {
        let i2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / dim as f64);
        F::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}

/// Scaled dot-product attention `softmax(Q Kᵀ / sqrt(d_k)) V` over the valid
/// key positions. Returns the output and the attention weights.
pub fn self_attention<F: Scalar>(
    q: ArrayView2<'_, F>,
    k: ArrayView2<'_, F>,
    v: ArrayView2<'_, F>,
    mask: &[bool],
) -> Result<(Array2<F>, Array2<F>)> {
    let len = k.nrows();
    if v.nrows() != len || mask.len() != len || q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "attention shapes Q {:?}, K {:?}, V {:?}, mask {}",
            q.shape(),
            k.shape(),
            v.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    let scale = F::one() / F::lit(q.ncols() as f64).sqrt();
    let scores = q.dot(&k.t()) * scale;
    let probs = masked_softmax_rows(scores.view(), mask);
    Ok((probs.dot(&v), probs))
}

/// Projection weights and layer norm of one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams<F> {
    pub w_q: Array2<F>,
    pub w_k: Array2<F>,
    pub w_v: Array2<F>,
    pub w_o: Array2<F>,
    pub ln_gain: Array1<F>,
    pub ln_bias: Array1<F>,
}

impl<F: Scalar> MhaParams<F> {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_q: glorot(rng, dim, dim),
            w_k: glorot(rng, dim, dim),
            w_v: glorot(rng, dim, dim),
            w_o: glorot(rng, dim, dim),
            ln_gain: Array1::ones(dim),
            ln_bias: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            w_q: Array2::zeros((dim, dim)),
            w_k: Array2::zeros((dim, dim)),
            w_v: Array2::zeros((dim, dim)),
            w_o: Array2::zeros((dim, dim)),
            ln_gain: Array1::zeros(dim),
            ln_bias: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub(crate) fn visit<'a>(&'a self, group: ParamGroup, prefix: &str, sink: &mut ParamSink<'a, F>) {
        sink.matrix(group, format!("{prefix}.w_q"), &self.w_q);
        sink.matrix(group, format!("{prefix}.w_k"), &self.w_k);
        sink.matrix(group, format!("{prefix}.w_v"), &self.w_v);
        sink.matrix(group, format!("{prefix}.w_o"), &self.w_o);
        sink.vector(group, format!("{prefix}.ln_gain"), &self.ln_gain);
        sink.vector(group, format!("{prefix}.ln_bias"), &self.ln_bias);
    }

    pub(crate) fn visit_mut<'a>(
        &'a mut self,
        group: ParamGroup,
        prefix: &str,
        sink: &mut ParamSinkMut<'a, F>,
    ) {
        sink.matrix(group, format!("{prefix}.w_q"), &mut self.w_q);
        sink.matrix(group, format!("{prefix}.w_k"), &mut self.w_k);
        sink.matrix(group, format!("{prefix}.w_v"), &mut self.w_v);
        sink.matrix(group, format!("{prefix}.w_o"), &mut self.w_o);
        sink.vector(group, format!("{prefix}.ln_gain"), &mut self.ln_gain);
        sink.vector(group, format!("{prefix}.ln_bias"), &mut self.ln_bias);
    }
}

struct HeadCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Array2<F>,
    drop: Option<Array2<F>>,
}

pub(crate) struct MhaCache<F> {
    x: Array2<F>,
    heads: Vec<HeadCache<F>>,
    concat: Array2<F>,
    out_drop: Option<Array2<F>>,
    ln: LayerNormCache<F>,
}

fn check_input<F: Scalar>(x: &Array2<F>, params: &MhaParams<F>, cfg: &AttentionConfig, mask: &[bool]) -> Result<()> {
    cfg.validate()?;
    if x.ncols() != cfg.dim || params.dim() != cfg.dim || x.nrows() != mask.len() || x.nrows() == 0 {
        return Err(Error::Shape(format!(
            "attention input {:?} with mask {} for width {} (params width {})",
            x.shape(),
            mask.len(),
            cfg.dim,
            params.dim()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    Ok(())
}

pub(crate) fn mha_forward<F: Scalar>(
    x: &Array2<F>,
    params: &MhaParams<F>,
    cfg: &AttentionConfig,
    mask: &[bool],
    mode: &mut ForwardMode<'_>,
) -> Result<(Array2<F>, MhaCache<F>)> {
    check_input(x, params, cfg, mask)?;
    let n = x.nrows();
    let dk = cfg.head_dim();
    let scale = F::one() / F::lit(dk as f64).sqrt();
    let q_all = x.dot(&params.w_q);
    let k_all = x.dot(&params.w_k);
    let v_all = x.dot(&params.w_v);
    let mut concat = Array2::zeros((n, cfg.dim));
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let q = q_all.slice(cols).to_owned();
        let k = k_all.slice(cols).to_owned();
        let v = v_all.slice(cols).to_owned();
        let scores = q.dot(&k.t()) * scale;
        let probs = masked_softmax_rows(scores.view(), mask);
        let drop = mode.dropout_mask((n, n), cfg.dropout_rate);
        let weights = apply_mask(probs.clone(), &drop);
        concat.slice_mut(cols).assign(&weights.dot(&v));
        heads.push(HeadCache { q, k, v, probs, drop });
    }
    let attended = concat.dot(&params.w_o);
    let out_drop = mode.dropout_mask((n, cfg.dim), cfg.dropout_rate);
    let residual = x + &apply_mask(attended, &out_drop);
    let (y, ln) = layer_norm_forward(&residual, &params.ln_gain, &params.ln_bias);
    Ok((
        y,
        MhaCache {
            x: x.clone(),
            heads,
            concat,
            out_drop,
            ln,
        },
    ))
}

/// Backpropagates `dy` through one attention block; returns the input gradient.
pub(crate) fn mha_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &MhaCache<F>,
    params: &MhaParams<F>,
    cfg: &AttentionConfig,
    grads: &mut MhaParams<F>,
) -> Array2<F> {
    let dk = cfg.head_dim();
    let scale = F::one() / F::lit(dk as f64).sqrt();
    let dres = layer_norm_backward(dy, &cache.ln, &params.ln_gain, &mut grads.ln_gain, &mut grads.ln_bias);
    let mut dx = dres.clone();
    let dattended = apply_mask(dres, &cache.out_drop);
    grads.w_o += &cache.concat.t().dot(&dattended);
    let dconcat = dattended.dot(&params.w_o.t());

    let n = cache.x.nrows();
    let mut dq_all = Array2::zeros((n, cfg.dim));
    let mut dk_all = Array2::zeros((n, cfg.dim));
    let mut dv_all = Array2::zeros((n, cfg.dim));
    for (h, hc) in cache.heads.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let dout = dconcat.slice(cols);
        let weights = apply_mask(hc.probs.clone(), &hc.drop);
        dv_all.slice_mut(cols).assign(&weights.t().dot(&dout));
        let dweights = dout.dot(&hc.v.t());
        let dprobs = apply_mask(dweights, &hc.drop);
        let dscores = softmax_rows_backward(&hc.probs, &dprobs) * scale;
        dq_all.slice_mut(cols).assign(&dscores.dot(&hc.k));
        dk_all.slice_mut(cols).assign(&dscores.t().dot(&hc.q));
    }
    let xt = cache.x.t();
    grads.w_q += &xt.dot(&dq_all);
    grads.w_k += &xt.dot(&dk_all);
    grads.w_v += &xt.dot(&dv_all);
    dx += &dq_all.dot(&params.w_q.t());
    dx += &dk_all.dot(&params.w_k.t());
    dx += &dv_all.dot(&params.w_v.t());
    dx
}

/// Multi-head attention `LN(x + Concat(h_1..h_n) W_O)` with `Q = K = V = x`
/// projected per head. Inference only (no dropout).
pub fn multi_head_attention<F: Scalar>(
    x: &Array2<F>,
    params: &MhaParams<F>,
    cfg: &AttentionConfig,
    mask: &[bool],
) -> Result<Array2<F>> {
    mha_forward(x, params, cfg, mask, &mut ForwardMode::Eval).map(|(y, _)| y)
}

/// Per-head attention weight matrices of a block, for inspection.
pub fn attention_weights<F: Scalar>(
    x: &Array2<F>,
    params: &MhaParams<F>,
    cfg: &AttentionConfig,
    mask: &[bool],
) -> Result<Vec<Array2<F>>> {
    let (_, cache) = mha_forward(x, params, cfg, mask, &mut ForwardMode::Eval)?;
    Ok(cache.heads.into_iter().map(|h| h.probs).collect())
}

/// Trainable encoder state: CLS token plus one or more attention blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct IsecParameters<F> {
    pub cls_token: Array1<F>,
    pub blocks: Vec<MhaParams<F>>,
}

impl<F: Scalar> IsecParameters<F> {
    pub fn init(dim: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let cls = glorot::<F>(rng, 1, dim).row(0).to_owned();
        Self {
            cls_token: cls,
            blocks: (0..depth).map(|_| MhaParams::init(dim, rng)).collect(),
        }
    }

    pub fn zeros(dim: usize, depth: usize) -> Self {
        Self {
            cls_token: Array1::zeros(dim),
            blocks: (0..depth).map(|_| MhaParams::zeros(dim)).collect(),
        }
    }

    pub(crate) fn visit<'a>(&'a self, sink: &mut ParamSink<'a, F>) {
        sink.vector(ParamGroup::Isec, "isec.cls_token".into(), &self.cls_token);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(ParamGroup::Isec, &format!("isec.block{i}"), sink);
        }
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, sink: &mut ParamSinkMut<'a, F>) {
        sink.vector(ParamGroup::Isec, "isec.cls_token".into(), &mut self.cls_token);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(ParamGroup::Isec, &format!("isec.block{i}"), sink);
        }
    }
}

pub(crate) struct IsecCache<F> {
    blocks: Vec<MhaCache<F>>,
}

pub(crate) fn isec_forward_cached<F: Scalar>(
    image_seq: &EmbeddingSequence<F>,
    params: &IsecParameters<F>,
    cfg: &AttentionConfig,
    mode: &mut ForwardMode<'_>,
) -> Result<(EmbeddingSequence<F>, IsecCache<F>)> {
    if image_seq.dim() != cfg.dim || params.cls_token.len() != cfg.dim {
        return Err(Error::Shape(format!(
            "image sequence width {} vs encoder width {}",
            image_seq.dim(),
            cfg.dim
        )));
    }
    let cls = params.cls_token.view().insert_axis(Axis(0));
    let with_cls = concatenate(Axis(0), &[cls, image_seq.data()]).expect("equal widths");
    let mut x = with_cls + &positional_encoding::<F>(image_seq.len() + 1, cfg.dim)?;
    let mask: Vec<bool> = std::iter::once(true).chain(image_seq.mask().iter().copied()).collect();
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (y, c) = mha_forward(&x, block, cfg, &mask, mode)?;
        caches.push(c);
        x = y;
    }
    Ok((EmbeddingSequence::new(x, mask)?, IsecCache { blocks: caches }))
}

/// Accumulates encoder gradients from `dy` (gradient w.r.t. the encoder output).
pub(crate) fn isec_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &IsecCache<F>,
    params: &IsecParameters<F>,
    cfg: &AttentionConfig,
    grads: &mut IsecParameters<F>,
) {
    let mut d = dy.clone();
    for ((block, c), g) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        d = mha_backward(&d, c, block, cfg, g);
    }
    // position 0 of the block input is cls_token + PE[0]
    grads.cls_token += &d.row(0);
}

/// Runs the encoder on an image-embedding sequence, returning the
/// `(len + 1) × dim` output with the CLS position first.
pub fn isec_forward<F: Scalar>(
    image_seq: &EmbeddingSequence<F>,
    params: &IsecParameters<F>,
    cfg: &AttentionConfig,
) -> Result<EmbeddingSequence<F>> {
    isec_forward_cached(image_seq, params, cfg, &mut ForwardMode::Eval).map(|(y, _)| y)
}
