//! Modality fusion, the transformer classifier stack and the 5×3 multitask
//! head with its cross-entropy loss.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::data_model::{AspectLabelVector, AspectState, EmbeddingSequence, NUM_ASPECTS, NUM_STATES};
use crate::error::{Error, Result};
use crate::isec::{mha_backward, mha_forward, AttentionConfig, MhaCache, MhaParams};
use crate::nn::{
    apply_mask, gelu, gelu_grad, glorot, layer_norm_backward, layer_norm_forward, ForwardMode,
    LayerNormCache,
};
use crate::params::{ParamGroup, ParamSink, ParamSinkMut};
use crate::scalar::Scalar;

/// Number of head outputs (5 aspects × 3 states).
pub const HEAD_OUTPUTS: usize = NUM_ASPECTS * NUM_STATES;

/// Concatenates text and encoded image sequences along the token axis,
/// text first.
pub fn fuse<F: Scalar>(
    text: &EmbeddingSequence<F>,
    encoded_image: &EmbeddingSequence<F>,
) -> Result<EmbeddingSequence<F>> {
    if text.dim() != encoded_image.dim() {
        return Err(Error::Shape(format!(
            "cannot fuse width {} with width {}",
            text.dim(),
            encoded_image.dim()
        )));
    }
    let data = concatenate(Axis(0), &[text.data(), encoded_image.data()]).expect("equal widths");
    let mask = text.mask().iter().chain(encoded_image.mask()).copied().collect();
    EmbeddingSequence::new(data, mask)
}

/// One post-norm transformer encoder block: attention sublayer followed by a
/// GELU feed-forward sublayer, each with residual and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<F> {
    pub attention: MhaParams<F>,
    pub ffn_w1: Array2<F>,
    pub ffn_b1: Array1<F>,
    pub ffn_w2: Array2<F>,
    pub ffn_b2: Array1<F>,
    pub ln_gain: Array1<F>,
    pub ln_bias: Array1<F>,
}

impl<F: Scalar> EncoderBlock<F> {
    pub fn init(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attention: MhaParams::init(dim, rng),
            ffn_w1: glorot(rng, dim, hidden),
            ffn_b1: Array1::zeros(hidden),
            ffn_w2: glorot(rng, hidden, dim),
            ffn_b2: Array1::zeros(dim),
            ln_gain: Array1::ones(dim),
            ln_bias: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            attention: MhaParams::zeros(dim),
            ffn_w1: Array2::zeros((dim, hidden)),
            ffn_b1: Array1::zeros(hidden),
            ffn_w2: Array2::zeros((hidden, dim)),
            ffn_b2: Array1::zeros(dim),
            ln_gain: Array1::zeros(dim),
            ln_bias: Array1::zeros(dim),
        }
    }
}

/// Classifier stack plus the shared linear head reshaped to 5×3.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParameters<F> {
    pub blocks: Vec<EncoderBlock<F>>,
    pub head_w: Array2<F>,
    pub head_b: Array1<F>,
}

impl<F: Scalar> ClassifierParameters<F> {
    pub fn init(dim: usize, num_blocks: usize, ffn_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks = (0..num_blocks)
            .map(|_| EncoderBlock::init(dim, ffn_hidden, rng))
            .collect();
        Self {
            blocks,
            head_w: glorot(rng, dim, HEAD_OUTPUTS),
            head_b: Array1::zeros(HEAD_OUTPUTS),
        }
    }

    pub fn zeros(dim: usize, num_blocks: usize, ffn_hidden: usize) -> Self {
        Self {
            blocks: (0..num_blocks).map(|_| EncoderBlock::zeros(dim, ffn_hidden)).collect(),
            head_w: Array2::zeros((dim, HEAD_OUTPUTS)),
            head_b: Array1::zeros(HEAD_OUTPUTS),
        }
    }

    pub fn dim(&self) -> usize {
        self.head_w.nrows()
    }

    pub(crate) fn visit<'a>(&'a self, sink: &mut ParamSink<'a, F>) {
        let g = ParamGroup::Classifier;
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("classifier.block{i}");
            b.attention.visit(g, &format!("{p}.attn"), sink);
            sink.matrix(g, format!("{p}.ffn_w1"), &b.ffn_w1);
            sink.vector(g, format!("{p}.ffn_b1"), &b.ffn_b1);
            sink.matrix(g, format!("{p}.ffn_w2"), &b.ffn_w2);
            sink.vector(g, format!("{p}.ffn_b2"), &b.ffn_b2);
            sink.vector(g, format!("{p}.ln_gain"), &b.ln_gain);
            sink.vector(g, format!("{p}.ln_bias"), &b.ln_bias);
        }
        sink.matrix(g, "classifier.head_w".into(), &self.head_w);
        sink.vector(g, "classifier.head_b".into(), &self.head_b);
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, sink: &mut ParamSinkMut<'a, F>) {
        let g = ParamGroup::Classifier;
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("classifier.block{i}");
            b.attention.visit_mut(g, &format!("{p}.attn"), sink);
            sink.matrix(g, format!("{p}.ffn_w1"), &mut b.ffn_w1);
            sink.vector(g, format!("{p}.ffn_b1"), &mut b.ffn_b1);
            sink.matrix(g, format!("{p}.ffn_w2"), &mut b.ffn_w2);
            sink.vector(g, format!("{p}.ffn_b2"), &mut b.ffn_b2);
            sink.vector(g, format!("{p}.ln_gain"), &mut b.ln_gain);
            sink.vector(g, format!("{p}.ln_bias"), &mut b.ln_bias);
        }
        sink.matrix(g, "classifier.head_w".into(), &mut self.head_w);
        sink.vector(g, "classifier.head_b".into(), &mut self.head_b);
    }
}

/// Unnormalized per-aspect scores; row = aspect, column = state index.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix<F>(Array2<F>);

impl<F: Scalar> LogitsMatrix<F> {
    pub fn new(scores: Array2<F>) -> Result<Self> {
        if scores.dim() != (NUM_ASPECTS, NUM_STATES) {
            return Err(Error::Shape(format!(
                "logits must be {NUM_ASPECTS}×{NUM_STATES}, got {:?}",
                scores.dim()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Self(scores))
    }

    pub fn scores(&self) -> &Array2<F> {
        &self.0
    }

    /// Row-wise softmax with max subtraction.
    pub fn probabilities(&self) -> Array2<F> {
        let mut p = self.0.clone();
        for mut row in p.rows_mut() {
            let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        p
    }
}

/// Per-aspect argmax; ties go to the smaller state index.
pub fn predict_labels<F: Scalar>(logits: &LogitsMatrix<F>) -> AspectLabelVector {
    let mut states = [AspectState::Absent; NUM_ASPECTS];
    for (slot, row) in states.iter_mut().zip(logits.0.rows()) {
        let mut best = 0;
        for k in 1..NUM_STATES {
            if row[k] > row[best] {
                best = k;
            }
        }
        *slot = AspectState::from_index(best).expect("state index < 3");
    }
    AspectLabelVector::new(states)
}

fn log_sum_exp<F: Scalar>(row: ndarray::ArrayView1<'_, F>) -> F {
    let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln()
}

/// Sum over aspects of `-log softmax(row)[gold]`.
pub fn multitask_loss<F: Scalar>(logits: &LogitsMatrix<F>, gold: &AspectLabelVector) -> F {
    logits
        .0
        .rows()
        .into_iter()
        .zip(gold.states())
        .map(|(row, s)| log_sum_exp(row) - row[s.index()])
        .sum()
}

/// Loss and its gradient with respect to the logits (`softmax - onehot`).
pub fn multitask_loss_grad<F: Scalar>(
    logits: &LogitsMatrix<F>,
    gold: &AspectLabelVector,
) -> (F, Array2<F>) {
    let mut grad = logits.probabilities();
    for (j, s) in gold.states().iter().enumerate() {
        grad[[j, s.index()]] -= F::one();
    }
    (multitask_loss(logits, gold), grad)
}

/// Mean multitask loss over a batch.
pub fn batch_loss<F: Scalar>(logits: &[LogitsMatrix<F>], gold: &[AspectLabelVector]) -> Result<F> {
    if logits.len() != gold.len() || logits.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} logits vs {} labels",
            logits.len(),
            gold.len()
        )));
    }
    let total: F = logits.iter().zip(gold).map(|(l, g)| multitask_loss(l, g)).sum();
    Ok(total / F::lit(logits.len() as f64))
}

struct BlockCache<F> {
    attention: MhaCache<F>,
    attn_out: Array2<F>,
    pre_act: Array2<F>,
    hidden: Array2<F>,
    drop: Option<Array2<F>>,
    ln: LayerNormCache<F>,
}

pub(crate) struct ClassifierCache<F> {
    blocks: Vec<BlockCache<F>>,
    pooled: Array1<F>,
    mask: Vec<bool>,
    rows: usize,
}

fn block_forward<F: Scalar>(
    x: &Array2<F>,
    block: &EncoderBlock<F>,
    cfg: &AttentionConfig,
    mask: &[bool],
    mode: &mut ForwardMode<'_>,
) -> Result<(Array2<F>, BlockCache<F>)> {
    let (attn_out, attention) = mha_forward(x, &block.attention, cfg, mask, mode)?;
    let pre_act = attn_out.dot(&block.ffn_w1) + &block.ffn_b1;
    let hidden = pre_act.mapv(gelu);
    let ffn = hidden.dot(&block.ffn_w2) + &block.ffn_b2;
    let drop = mode.dropout_mask(ffn.dim(), cfg.dropout_rate);
    let residual = &attn_out + &apply_mask(ffn, &drop);
    let (y, ln) = layer_norm_forward(&residual, &block.ln_gain, &block.ln_bias);
    Ok((
        y,
        BlockCache {
            attention,
            attn_out,
            pre_act,
            hidden,
            drop,
            ln,
        },
    ))
}

fn block_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &BlockCache<F>,
    block: &EncoderBlock<F>,
    cfg: &AttentionConfig,
    grads: &mut EncoderBlock<F>,
) -> Array2<F> {
    let dres = layer_norm_backward(dy, &cache.ln, &block.ln_gain, &mut grads.ln_gain, &mut grads.ln_bias);
    let dffn = apply_mask(dres.clone(), &cache.drop);
    grads.ffn_w2 += &cache.hidden.t().dot(&dffn);
    grads.ffn_b2 += &dffn.sum_axis(Axis(0));
    let dhidden = dffn.dot(&block.ffn_w2.t());
    let dpre = dhidden * &cache.pre_act.mapv(gelu_grad);
    grads.ffn_w1 += &cache.attn_out.t().dot(&dpre);
    grads.ffn_b1 += &dpre.sum_axis(Axis(0));
    let dattn_out = dres + &dpre.dot(&block.ffn_w1.t());
    mha_backward(&dattn_out, &cache.attention, &block.attention, cfg, &mut grads.attention)
}

pub(crate) fn classify_forward_cached<F: Scalar>(
    fused: &EmbeddingSequence<F>,
    params: &ClassifierParameters<F>,
    cfg: &AttentionConfig,
    mode: &mut ForwardMode<'_>,
) -> Result<(LogitsMatrix<F>, ClassifierCache<F>)> {
    if fused.dim() != params.dim() {
        return Err(Error::Shape(format!(
            "fused width {} vs classifier width {}",
            fused.dim(),
            params.dim()
        )));
    }
    let mask = fused.mask().to_vec();
    let mut x = fused.data().to_owned();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (y, c) = block_forward(&x, block, cfg, &mask, mode)?;
        blocks.push(c);
        x = y;
    }
    let pooled = masked_mean(&x, &mask)?;
    let flat = pooled.dot(&params.head_w) + &params.head_b;
    let logits = LogitsMatrix::new(
        flat.into_shape_with_order((NUM_ASPECTS, NUM_STATES))
            .expect("15 head outputs"),
    )?;
    Ok((
        logits,
        ClassifierCache {
            blocks,
            pooled,
            rows: mask.len(),
            mask,
        },
    ))
}

/// Backpropagates `dlogits` (5×3) to the fused input; returns its gradient.
pub(crate) fn classify_backward<F: Scalar>(
    dlogits: &Array2<F>,
    cache: &ClassifierCache<F>,
    params: &ClassifierParameters<F>,
    cfg: &AttentionConfig,
    grads: &mut ClassifierParameters<F>,
) -> Array2<F> {
    let dflat = dlogits
        .to_shape(HEAD_OUTPUTS)
        .expect("5×3 logits gradient")
        .to_owned();
    grads.head_w += &cache
        .pooled
        .view()
        .insert_axis(Axis(1))
        .dot(&dflat.view().insert_axis(Axis(0)));
    grads.head_b += &dflat;
    let dpooled = params.head_w.dot(&dflat);
    let valid = F::lit(cache.mask.iter().filter(|&&m| m).count() as f64);
    let mut dx = Array2::zeros((cache.rows, params.dim()));
    for (t, &m) in cache.mask.iter().enumerate() {
        if m {
            dx.slice_mut(s![t, ..]).assign(&(&dpooled / valid));
        }
    }
    for ((block, c), g) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        dx = block_backward(&dx, c, block, cfg, g);
    }
    dx
}

/// Mean of the valid rows.
pub fn masked_mean<F: Scalar>(x: &Array2<F>, mask: &[bool]) -> Result<Array1<F>> {
    let mut acc = Array1::zeros(x.ncols());
    let mut n = 0usize;
    for (row, &m) in x.rows().into_iter().zip(mask) {
        if m {
            acc += &row;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::AllMasked);
    }
    Ok(acc / F::lit(n as f64))
}

/// Runs the classifier stack over a fused sequence and returns the 5×3 logits.
pub fn classify_forward<F: Scalar>(
    fused: &EmbeddingSequence<F>,
    params: &ClassifierParameters<F>,
    cfg: &AttentionConfig,
    mode: &mut ForwardMode<'_>,
) -> Result<LogitsMatrix<F>> {
    classify_forward_cached(fused, params, cfg, mode).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn seq(rows: usize, dim: usize, mask: Vec<bool>, seed: u64) -> EmbeddingSequence<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1.0..1.0));
        EmbeddingSequence::new(d, mask).unwrap()
    }

    fn lv(v: [i64; 5]) -> AspectLabelVector {
        AspectLabelVector::from_values(&v).unwrap()
    }

    #[test]
    fn fuse_concatenates_tokens_text_first() {
        let text = seq(3, 512, vec![true, true, false], 1);
        let img = seq(4, 512, vec![true, true, true, false], 2);
        let fused = fuse(&text, &img).unwrap();
        assert_eq!(fused.data().dim(), (7, 512));
        assert_eq!(fused.mask(), &[true, true, false, true, true, true, false]);
        assert_eq!(fused.data().slice(s![0..3, ..]), text.data());
        assert_eq!(fused.data().slice(s![3..7, ..]), img.data());
        assert!(matches!(fuse(&text, &seq(2, 8, vec![true; 2], 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_yields_finite_5x3_logits() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ClassifierParameters::<f64>::init(8, 2, 32, &mut rng);
        let l = classify_forward(&seq(6, 8, vec![true, true, false, true, true, false], 4), &params, &cfg, &mut ForwardMode::Eval).unwrap();
        assert_eq!(l.scores().dim(), (5, 3));
        assert!(l.scores().iter().all(|v| v.is_finite()));
        assert!(matches!(
            EmbeddingSequence::new(Array2::<f64>::zeros((2, 8)), vec![false, false]),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn zero_head_weight_returns_bias() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let mut params = ClassifierParameters::<f64>::zeros(8, 2, 32);
        for b in &mut params.blocks {
            b.ln_gain.fill(1.0);
            b.attention.ln_gain.fill(1.0);
        }
        params.head_b = Array1::from_iter((0..15).map(|i| i as f64 * 0.5 - 3.0));
        for seed in 0..3 {
            let l = classify_forward(&seq(4, 8, vec![true; 4], seed), &params, &cfg, &mut ForwardMode::Eval).unwrap();
            assert_eq!(l.scores().as_slice().unwrap(), params.head_b.as_slice().unwrap());
        }
    }

    #[test]
    fn prediction_examples() {
        let mut s = Array2::zeros((5, 3));
        s[[0, 0]] = 0.1;
        s[[0, 1]] = 0.2;
        s[[0, 2]] = 5.0;
        for j in 1..5 {
            s[[j, 0]] = 1.0;
        }
        let l = LogitsMatrix::new(s.clone()).unwrap();
        assert_eq!(predict_labels(&l), lv([2, 0, 0, 0, 0]));
        let zero = LogitsMatrix::new(Array2::<f64>::zeros((5, 3))).unwrap();
        assert_eq!(predict_labels(&zero), lv([0; 5]));
        let mut shifted = s;
        for (j, mut row) in shifted.rows_mut().into_iter().enumerate() {
            row += j as f64 * 7.0 - 11.0;
        }
        assert_eq!(predict_labels(&LogitsMatrix::new(shifted).unwrap()), lv([2, 0, 0, 0, 0]));
    }

    #[test]
    fn loss_examples() {
        let uniform = LogitsMatrix::new(Array2::<f64>::from_elem((5, 3), 0.7)).unwrap();
        assert_abs_diff_eq!(multitask_loss(&uniform, &lv([0, 1, 2, 1, 0])), 5.0 * 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(5.0 * 3f64.ln(), 5.493061, epsilon = 1e-6);

        let mut s = Array2::<f64>::zeros((5, 3));
        s[[0, 0]] = 2f64.ln();
        let l = LogitsMatrix::new(s).unwrap();
        // row 0 contributes -ln(2/4); rows 1..4 contribute ln 3 each
        let expect = 2f64.ln() + 4.0 * 3f64.ln();
        assert_abs_diff_eq!(multitask_loss(&l, &lv([0; 5])), expect, epsilon = 1e-12);

        let mut confident = Array2::<f64>::zeros((5, 3));
        for j in 0..5 {
            confident[[j, 2]] = 800.0;
        }
        let c = LogitsMatrix::new(confident).unwrap();
        assert_eq!(multitask_loss(&c, &lv([2; 5])), 0.0);
        assert!(multitask_loss(&c, &lv([0; 5])).is_finite());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let s = array![[0.3, -1.0, 2.0], [0.0, 0.5, 0.1], [1.0, 1.0, 1.0], [-2.0, 0.0, 3.0], [0.2, 0.2, -0.4]];
        let gold = lv([2, 1, 0, 0, 2]);
        let (_, g) = multitask_loss_grad(&LogitsMatrix::new(s.clone()).unwrap(), &gold);
        let h = 1e-6;
        for j in 0..5 {
            for k in 0..3 {
                let mut p = s.clone();
                p[[j, k]] += h;
                let mut m = s.clone();
                m[[j, k]] -= h;
                let fd = (multitask_loss(&LogitsMatrix::new(p).unwrap(), &gold)
                    - multitask_loss(&LogitsMatrix::new(m).unwrap(), &gold))
                    / (2.0 * h);
                assert_abs_diff_eq!(g[[j, k]], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn batch_loss_is_the_mean() {
        let a = LogitsMatrix::new(Array2::<f64>::zeros((5, 3))).unwrap();
        let gold = [lv([0; 5]), lv([1; 5])];
        assert_abs_diff_eq!(batch_loss(&[a.clone(), a], &gold).unwrap(), 5.0 * 3f64.ln(), epsilon = 1e-12);
        assert!(batch_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn logits_shape_is_enforced() {
        assert!(LogitsMatrix::new(Array2::<f64>::zeros((3, 5))).is_err());
        assert!(LogitsMatrix::new(Array2::<f64>::from_elem((5, 3), f64::NAN)).is_err());
    }
}
