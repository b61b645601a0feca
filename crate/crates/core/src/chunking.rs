//! Timeline segmentation, frame pooling and batch padding.

use ndarray::{s, Array2, Array3};

use crate::data_model::{AspectLabelVector, ChunkedReview, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sampling parameters for one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineSpec {
    pub duration_s: f64,
    pub fps: f64,
    pub chunk_len_s: f64,
}

impl TimelineSpec {
    pub const DEFAULT_FPS: f64 = 3.0;
    pub const DEFAULT_CHUNK_LEN_S: f64 = 2.0;

    pub fn new(duration_s: f64) -> Self {
        Self {
            duration_s,
            fps: Self::DEFAULT_FPS,
            chunk_len_s: Self::DEFAULT_CHUNK_LEN_S,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("fps", self.fps),
            ("chunk_len_s", self.chunk_len_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One chunk of a segmented timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub frame_count: usize,
}

// Rounds values within 1e-9 of an integer so that products like 2.0 * 3.0
// land on the boundary exactly.
fn snapped_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x.ceil()
    }
}

/// Splits `[0, duration)` into chunks of `chunk_len_s` (the last one may be
/// shorter) and counts the frame instants `k / fps` falling in each chunk.
pub fn segment_timeline(spec: &TimelineSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    let n = snapped_ceil(spec.duration_s / spec.chunk_len_s) as usize;
    let frames_before = |t: f64| snapped_ceil(t * spec.fps) as usize;
    Ok((0..n)
        .map(|i| {
            let start_s = i as f64 * spec.chunk_len_s;
            let end_s = if i + 1 == n {
                spec.duration_s
            } else {
                (i + 1) as f64 * spec.chunk_len_s
            };
            Segment {
                start_s,
                end_s,
                frame_count: frames_before(end_s) - frames_before(start_s),
            }
        })
        .collect())
}

/// Element-wise mean of the frame embeddings of one chunk.
pub fn aggregate_frame_embeddings<F: Scalar, V: AsRef<[F]>>(frames: &[V]) -> Result<Vec<F>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Empty("no frame embeddings to aggregate".into()))?;
    let dim = first.as_ref().len();
    let mut acc = vec![F::zero(); dim];
    for (i, f) in frames.iter().enumerate() {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(Error::Shape(format!(
                "frame {i} has width {}, expected {dim}",
                f.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence(format!("frame {i} is not finite")));
        }
        for (a, &v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let n = F::lit(frames.len() as f64);
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// A zero-padded batch of reviews with tail masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch<F> {
    pub text: Array3<F>,
    pub image: Array3<F>,
    pub mask: Array2<bool>,
    pub labels: Option<Vec<AspectLabelVector>>,
}

impl<F: Scalar> PaddedBatch<F> {
    pub fn batch_size(&self) -> usize {
        self.mask.nrows()
    }

    pub fn max_chunks(&self) -> usize {
        self.mask.ncols()
    }

    fn row(&self, data: &Array3<F>, b: usize) -> EmbeddingSequence<F> {
        EmbeddingSequence::new(
            data.slice(s![b, .., ..]).to_owned(),
            self.mask.row(b).to_vec(),
        )
        .expect("padded rows keep at least one valid chunk")
    }

    pub fn text_sequence(&self, b: usize) -> EmbeddingSequence<F> {
        self.row(&self.text, b)
    }

    pub fn image_sequence(&self, b: usize) -> EmbeddingSequence<F> {
        self.row(&self.image, b)
    }
}

/// Stacks reviews into `(batch × max_chunks × dim)` arrays, padding shorter
/// reviews with zero rows at the tail. Labels are kept only if every review
/// has one.
pub fn pad_batch<F: Scalar>(reviews: &[&ChunkedReview]) -> Result<PaddedBatch<F>> {
    let first = reviews
        .first()
        .ok_or_else(|| Error::Empty("cannot pad an empty batch".into()))?;
    let dim = first.dim();
    for r in reviews {
        r.validate()?;
        if r.dim() != dim {
            return Err(Error::Shape(format!(
                "review {} has width {}, batch width is {dim}",
                r.review_id,
                r.dim()
            )));
        }
    }
    let max_cs = reviews.iter().map(|r| r.num_chunks()).max().unwrap_or(0);
    let b = reviews.len();
    let mut text = Array3::zeros((b, max_cs, dim));
    let mut image = Array3::zeros((b, max_cs, dim));
    let mut mask = Array2::from_elem((b, max_cs), false);
    for (i, r) in reviews.iter().enumerate() {
        for (t, c) in r.chunks.iter().enumerate() {
            mask[[i, t]] = true;
            for k in 0..dim {
                text[[i, t, k]] = F::from_f32_value(c.text_embedding[k]);
                image[[i, t, k]] = F::from_f32_value(c.image_embedding[k]);
            }
        }
    }
    let labels = reviews.iter().map(|r| r.gold_label).collect();
    Ok(PaddedBatch {
        text,
        image,
        mask,
        labels,
    })
}
