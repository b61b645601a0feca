//! Seeded synthetic datasets with planted, learnable label structure.
//!
//! Each (aspect, state) pair owns one of 15 orthonormal directions. A chunk
//! embedding is `w · strength · Σ_j u[j, state_j] + N(0, I)` where the
//! weight `w` is `modality_split` for text and `1 − modality_split` for
//! image embeddings.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chunking::{segment_timeline, TimelineSpec};
use crate::data_model::{
    write_embeddings, AspectLabelVector, AspectState, Chunk, ChunkedReview, DatasetManifest,
    SampleEntry, Split, NUM_ASPECTS, NUM_STATES,
};
use crate::error::{Error, Result};

/// Number of planted directions: one per (aspect, state).
pub const NUM_DIRECTIONS: usize = NUM_ASPECTS * NUM_STATES;

/// (complaint, non-complaint) counts per aspect out of 433 reviews in the
/// reference corpus; the remainder of each row is "absent".
const SKEWED_COUNTS: [(u32, u32); NUM_ASPECTS] = [(29, 75), (49, 71), (16, 123), (106, 230), (69, 30)];
const SKEWED_TOTAL: u32 = 433;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_samples: usize,
    pub dim: usize,
    pub max_chunks: usize,
    pub seed: u64,
    pub signal_strength: f64,
    /// Share of the label signal carried by text; image gets the rest.
    pub modality_split: f64,
    /// Fraction of samples assigned to the test split.
    pub test_fraction: f64,
    /// Draw states from the reference corpus's per-aspect frequencies
    /// instead of uniformly.
    pub skew_marginals: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_samples: 433,
            dim: 32,
            max_chunks: 4,
            seed: 0,
            signal_strength: 3.0,
            modality_split: 0.5,
            test_fraction: 64.0 / 433.0,
            skew_marginals: false,
        }
    }
}

impl SynthSpec {
    /// A zero signal strength is accepted; it yields label-independent data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_samples < 2 {
            return bad(format!("num_samples must be >= 2, got {}", self.num_samples));
        }
        if self.dim < NUM_DIRECTIONS {
            return bad(format!(
                "dim {} cannot hold {NUM_DIRECTIONS} orthogonal signal directions",
                self.dim
            ));
        }
        if self.max_chunks == 0 {
            return bad("max_chunks must be >= 1".into());
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return bad(format!("signal_strength must be >= 0, got {}", self.signal_strength));
        }
        if !(0.0..=1.0).contains(&self.modality_split) {
            return bad(format!("modality_split must lie in [0, 1], got {}", self.modality_split));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        Ok(())
    }

    pub fn num_test(&self) -> usize {
        ((self.num_samples as f64 * self.test_fraction).round() as usize).min(self.num_samples - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub reviews: Vec<ChunkedReview>,
    pub splits: Vec<Split>,
    /// Row `3j + s` is the direction of aspect `j` in state `s`.
    pub directions: Array2<f64>,
}

impl SyntheticDataset {
    pub fn split(&self, which: Split) -> Vec<ChunkedReview> {
        self.reviews
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(r, _)| r.clone())
            .collect()
    }
}

/// `n` orthonormal rows of width `dim` from a seeded Gaussian matrix.
pub fn orthonormal_directions(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    if n > dim {
        return Err(Error::Config(format!("cannot fit {n} orthogonal directions in dim {dim}")));
    }
    let mut out = Array2::<f64>::zeros((n, dim));
    let mut i = 0;
    while i < n {
        let mut v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        // two passes of Gram-Schmidt keep rounding error near machine precision
        for _ in 0..2 {
            for k in 0..i {
                let u = out.row(k);
                let d = v.dot(&u);
                v.scaled_add(-d, &u);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            out.row_mut(i).assign(&(v / norm));
            i += 1;
        }
    }
    Ok(out)
}

fn draw_state(rng: &mut ChaCha8Rng, aspect: usize, skew: bool) -> AspectState {
    if !skew {
        return AspectState::ALL[rng.random_range(0..NUM_STATES)];
    }
    let (complaint, non) = SKEWED_COUNTS[aspect];
    let r = rng.random_range(0..SKEWED_TOTAL);
    if r < complaint {
        AspectState::Complaint
    } else if r < complaint + non {
        AspectState::NonComplaint
    } else {
        AspectState::Absent
    }
}

pub fn sample_id(i: usize) -> String {
    format!("syn{i:05}")
}

/// Generates the dataset in memory. Sample `i` draws from its own stream of
/// the seeded generator, so samples are independent of generation order.
pub fn generate_dataset(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions = orthonormal_directions(NUM_DIRECTIONS, spec.dim, &mut master)?;
    let n_train = spec.num_samples - spec.num_test();
    let mut reviews = Vec::with_capacity(spec.num_samples);
    let mut splits = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let states: [AspectState; NUM_ASPECTS] =
            std::array::from_fn(|j| draw_state(&mut rng, j, spec.skew_marginals));
        let label = AspectLabelVector::new(states);
        let mut signal = Array1::<f64>::zeros(spec.dim);
        for (j, s) in states.iter().enumerate() {
            signal += &directions.row(NUM_STATES * j + s.index());
        }
        signal *= spec.signal_strength;

        let n_chunks = rng.random_range(1..=spec.max_chunks);
        let tail = 0.5 * rng.random_range(1..=4) as f64;
        let duration = TimelineSpec::DEFAULT_CHUNK_LEN_S * (n_chunks - 1) as f64 + tail;
        let segments = segment_timeline(&TimelineSpec::new(duration))?;
        debug_assert_eq!(segments.len(), n_chunks);
        let embed = |weight: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
            signal
                .iter()
                .map(|&s| {
                    let noise: f64 = StandardNormal.sample(rng);
                    (weight * s + noise) as f32
                })
                .collect()
        };
        let chunks = segments
            .iter()
            .map(|seg| Chunk {
                start_s: seg.start_s as f32,
                end_s: seg.end_s as f32,
                text_embedding: embed(spec.modality_split, &mut rng),
                image_embedding: embed(1.0 - spec.modality_split, &mut rng),
            })
            .collect();
        reviews.push(ChunkedReview::new(sample_id(i), chunks, Some(label))?);
        splits.push(if i < n_train { Split::Train } else { Split::Test });
    }
    Ok(SyntheticDataset {
        reviews,
        splits,
        directions,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDING_DIR: &str = "emb";

/// Writes `emb/<id>.mceb` files plus `manifest.json` under `out_dir` and
/// returns the manifest path.
pub fn generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let data = generate_dataset(spec)?;
    let emb_dir = out_dir.join(EMBEDDING_DIR);
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    let mut entries = Vec::with_capacity(data.reviews.len());
    for (review, split) in data.reviews.iter().zip(&data.splits) {
        let rel = PathBuf::from(EMBEDDING_DIR).join(format!("{}.mceb", review.review_id));
        write_embeddings(review, out_dir.join(&rel))?;
        entries.push(SampleEntry {
            review_id: review.review_id.clone(),
            embedding_file: rel,
            gold_label: review.gold_label.expect("generated with labels"),
            split: *split,
        });
    }
    let manifest = DatasetManifest::new(entries, out_dir);
    let path = out_dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    log::info!("wrote {} synthetic samples to {}", data.reviews.len(), out_dir.display());
    Ok(path)
}
