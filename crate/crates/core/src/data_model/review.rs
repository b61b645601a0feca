//! Chunked reviews and the masked embedding sequences built from them.

use ndarray::{Array2, ArrayView2};

use super::label::AspectLabelVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Longest span a single chunk may cover, in seconds.
pub const MAX_CHUNK_SPAN_S: f32 = 2.0;

/// One time slice of a review with its transcript and frame embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub start_s: f32,
    pub end_s: f32,
    pub text_embedding: Vec<f32>,
    pub image_embedding: Vec<f32>,
}

/// A review decomposed into contiguous chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedReview {
    pub review_id: String,
    pub chunks: Vec<Chunk>,
    pub gold_label: Option<AspectLabelVector>,
}

impl ChunkedReview {
    /// Builds a review and checks every structural invariant.
    pub fn new(
        review_id: impl Into<String>,
        chunks: Vec<Chunk>,
        gold_label: Option<AspectLabelVector>,
    ) -> Result<Self> {
        let review = Self {
            review_id: review_id.into(),
            chunks,
            gold_label,
        };
        review.validate()?;
        Ok(review)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidReview(format!("{}: {msg}", self.review_id)));
        let Some(first) = self.chunks.first() else {
            return bad("review has no chunks".into());
        };
        let dim = first.text_embedding.len();
        if dim == 0 {
            return bad("embedding dimension is zero".into());
        }
        let mut prev_end: Option<f32> = None;
        for (i, c) in self.chunks.iter().enumerate() {
            if !(c.start_s.is_finite() && c.end_s.is_finite()) || c.start_s < 0.0 {
                return bad(format!("chunk {i} has invalid timestamps"));
            }
            let span = c.end_s - c.start_s;
            if span <= 0.0 || span > MAX_CHUNK_SPAN_S {
                return bad(format!("chunk {i} spans {span} s"));
            }
            if let Some(end) = prev_end {
                if c.start_s != end {
                    return bad(format!(
                        "chunk {i} starts at {} but previous chunk ends at {end}",
                        c.start_s
                    ));
                }
            }
            prev_end = Some(c.end_s);
            if c.text_embedding.len() != dim || c.image_embedding.len() != dim {
                return bad(format!("chunk {i} embedding width differs from {dim}"));
            }
            if c
                .text_embedding
                .iter()
                .chain(&c.image_embedding)
                .any(|v| !v.is_finite())
            {
                return bad(format!("chunk {i} has non-finite embedding values"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.chunks.first().map_or(0, |c| c.text_embedding.len())
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Transcript embeddings as an all-valid sequence.
    pub fn text_sequence<F: Scalar>(&self) -> Result<EmbeddingSequence<F>> {
        self.sequence(|c| &c.text_embedding)
    }

    /// Frame embeddings as an all-valid sequence.
    pub fn image_sequence<F: Scalar>(&self) -> Result<EmbeddingSequence<F>> {
        self.sequence(|c| &c.image_embedding)
    }

    fn sequence<F: Scalar>(&self, pick: impl Fn(&Chunk) -> &Vec<f32>) -> Result<EmbeddingSequence<F>> {
        let dim = self.dim();
        let data = Array2::from_shape_fn((self.chunks.len(), dim), |(r, c)| {
            F::from_f32_value(pick(&self.chunks[r])[c])
        });
        EmbeddingSequence::new(data, vec![true; self.chunks.len()])
    }
}

/// A `(len × dim)` token sequence with a per-row validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<F> {
    data: Array2<F>,
    mask: Vec<bool>,
}

impl<F: Scalar> EmbeddingSequence<F> {
    pub fn new(data: Array2<F>, mask: Vec<bool>) -> Result<Self> {
        if data.nrows() != mask.len() {
            return Err(Error::InvalidSequence(format!(
                "{} rows but mask of length {}",
                data.nrows(),
                mask.len()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidSequence("zero embedding width".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence("non-finite values".into()));
        }
        Ok(Self { data, mask })
    }

    pub fn data(&self) -> ArrayView2<'_, F> {
        self.data.view()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn into_parts(self) -> (Array2<F>, Vec<bool>) {
        (self.data, self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn chunk(start: f32, end: f32, dim: usize) -> Chunk {
        Chunk {
            start_s: start,
            end_s: end,
            text_embedding: vec![0.5; dim],
            image_embedding: vec![-0.5; dim],
        }
    }

    #[test]
    fn contiguous_review_is_valid() {
        let r = ChunkedReview::new("r", vec![chunk(0.0, 2.0, 4), chunk(2.0, 3.0, 4)], None).unwrap();
        assert_eq!(r.dim(), 4);
        let s = r.text_sequence::<f64>().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.data()[[1, 3]], 0.5);
    }

    #[test]
    fn review_invariants_are_enforced() {
        assert!(ChunkedReview::new("r", vec![], None).is_err());
        // gap
        assert!(ChunkedReview::new("r", vec![chunk(0.0, 2.0, 4), chunk(2.5, 3.0, 4)], None).is_err());
        // overlong
        assert!(ChunkedReview::new("r", vec![chunk(0.0, 2.5, 4)], None).is_err());
        // mixed dims
        let mut c = chunk(2.0, 4.0, 4);
        c.image_embedding.pop();
        assert!(ChunkedReview::new("r", vec![chunk(0.0, 2.0, 4), c], None).is_err());
        let mut c = chunk(0.0, 2.0, 4);
        c.text_embedding[0] = f32::NAN;
        assert!(ChunkedReview::new("r", vec![c], None).is_err());
    }

    #[test]
    fn sequence_invariants_are_enforced() {
        let d = array![[1.0f64, 2.0], [3.0, 4.0]];
        assert!(EmbeddingSequence::new(d.clone(), vec![true]).is_err());
        assert!(matches!(
            EmbeddingSequence::new(d.clone(), vec![false, false]),
            Err(Error::AllMasked)
        ));
        let mut bad = d.clone();
        bad[[0, 0]] = f64::INFINITY;
        assert!(EmbeddingSequence::new(bad, vec![true, true]).is_err());
        let s = EmbeddingSequence::new(d, vec![true, false]).unwrap();
        assert_eq!(s.valid_count(), 1);
    }
}
