//! Differentiable building blocks shared by the encoder and the classifier.
//!
//! Every forward function returns the values its backward counterpart needs;
//! backward functions accumulate parameter gradients with `+=`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Whether a forward pass is for training (dropout active) or inference.
pub enum ForwardMode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl ForwardMode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, ForwardMode::Train(_))
    }

    /// Inverted-dropout keep mask scaled by `1 / (1 - rate)`, or `None` when
    /// dropout is inactive. Draws nothing from the generator at rate 0.
    pub(crate) fn dropout_mask<F: Scalar>(
        &mut self,
        shape: (usize, usize),
        rate: f64,
    ) -> Option<Array2<F>> {
        match self {
            ForwardMode::Train(rng) if rate > 0.0 => {
                let keep = F::lit(1.0 / (1.0 - rate));
                Some(Array2::from_shape_fn(shape, |_| {
                    if rng.random::<f64>() < rate {
                        F::zero()
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        }
    }
}

pub(crate) fn apply_mask<F: Scalar>(x: Array2<F>, mask: &Option<Array2<F>>) -> Array2<F> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

/// Row-wise softmax restricted to valid columns; masked columns get weight 0.
pub fn masked_softmax_rows<F: Scalar>(scores: ArrayView2<'_, F>, mask: &[bool]) -> Array2<F> {
    let mut out = Array2::zeros(scores.raw_dim());
    for (row, mut o) in scores.rows().into_iter().zip(out.rows_mut()) {
        let max = row
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for ((o, &v), &m) in o.iter_mut().zip(row.iter()).zip(mask) {
            if m {
                *o = (v - max).exp();
                sum += *o;
            }
        }
        o.mapv_inplace(|v| v / sum);
    }
    out
}

/// Softmax backward: `dS = P ⊙ (dP − rowsum(dP ⊙ P))`.
pub(crate) fn softmax_rows_backward<F: Scalar>(probs: &Array2<F>, dprobs: &Array2<F>) -> Array2<F> {
    let dots = (dprobs * probs).sum_axis(Axis(1));
    let mut ds = dprobs.clone();
    for (mut row, &d) in ds.rows_mut().into_iter().zip(dots.iter()) {
        row.mapv_inplace(|v| v - d);
    }
    ds * probs
}

pub(crate) struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

/// Per-row layer normalization with learned gain and bias.
pub fn layer_norm<F: Scalar>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> Array2<F> {
    layer_norm_forward(x, gain, bias).0
}

pub(crate) fn layer_norm_forward<F: Scalar>(
    x: &Array2<F>,
    gain: &Array1<F>,
    bias: &Array1<F>,
) -> (Array2<F>, LayerNormCache<F>) {
    let d = F::lit(x.ncols() as f64);
    let eps = F::lit(LAYER_NORM_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        *s = F::one() / (var + eps).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let mut y = xhat.clone();
    Zip::from(y.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row)
            .and(gain)
            .and(bias)
            .for_each(|v, &g, &b| *v = *v * g + b);
    });
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LayerNormCache<F>,
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = F::lit(dy.ncols() as f64);
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / d;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gv, &xv| *o = s * (gv - mean_g - xv * mean_gx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * a * x * x)
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| F::lit(rng.random_range(-limit..limit)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let s = array![[1.0f64, 2.0, 100.0], [0.0, 0.0, -5.0]];
        let p = masked_softmax_rows(s.view(), &[true, true, false]);
        assert_eq!(p[[0, 2]], 0.0);
        assert_eq!(p[[1, 2]], 0.0);
        assert_abs_diff_eq!(p[[1, 0]], 0.5, epsilon = 1e-15);
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [-2.0, 0.0, 0.0, 2.0]];
        let y = layer_norm(&x, &Array1::ones(4), &Array1::zeros(4));
        for row in y.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn dropout_is_inactive_in_eval_and_at_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(ForwardMode::Eval.dropout_mask::<f32>((2, 2), 0.5).is_none());
        let mut mode = ForwardMode::Train(&mut rng);
        assert!(mode.dropout_mask::<f32>((2, 2), 0.0).is_none());
        let m = mode.dropout_mask::<f64>((50, 50), 0.2).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let dropped = m.iter().filter(|&&v| v == 0.0).count();
        assert!((300..700).contains(&dropped), "{dropped}");
    }
}
