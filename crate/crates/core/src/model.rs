//! The full model: encoder, fusion and classifier wired according to an
//! ablation variant.

use std::fmt;
use std::str::FromStr;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunking::PaddedBatch;
use crate::data_model::{AspectLabelVector, ChunkedReview, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::fusion::{
    classify_backward, classify_forward_cached, fuse, multitask_loss_grad, ClassifierCache, ClassifierParameters,
    LogitsMatrix,
};
use crate::isec::{isec_backward, isec_forward_cached, AttentionConfig, IsecCache, IsecParameters};
use crate::nn::ForwardMode;
use crate::params::{ParamMut, ParamRef, ParamSink, ParamSinkMut};
use crate::scalar::Scalar;

/// Which parts of the architecture are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Text tokens fused with encoded image tokens, full classifier stack.
    Multimodal,
    /// Encoded image tokens only.
    VideoOnly,
    /// Transcript (text) tokens only.
    AudioOnly,
    /// Raw text and image tokens mean-pooled straight into the head.
    FrozenOnly,
    /// Raw image tokens fused with text, encoder bypassed.
    WithoutIsec,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::VideoOnly,
        Variant::AudioOnly,
        Variant::Multimodal,
        Variant::FrozenOnly,
        Variant::WithoutIsec,
    ];

    pub fn uses_text(self) -> bool {
        self != Variant::VideoOnly
    }

    pub fn uses_image(self) -> bool {
        self != Variant::AudioOnly
    }

    pub fn uses_isec(self) -> bool {
        matches!(self, Variant::Multimodal | Variant::VideoOnly)
    }

    pub fn uses_stack(self) -> bool {
        self != Variant::FrozenOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Multimodal => "Multimodal",
            Variant::VideoOnly => "Video Only",
            Variant::AudioOnly => "Audio Only",
            Variant::FrozenOnly => "Frozen-only",
            Variant::WithoutIsec => "Without ISEC",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Variant::Multimodal => "multimodal",
            Variant::VideoOnly => "video_only",
            Variant::AudioOnly => "audio_only",
            Variant::FrozenOnly => "frozen_only",
            Variant::WithoutIsec => "without_isec",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.key())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Architecture hyperparameters. Defaults follow the full-size setup:
/// width 512, 8 heads, one encoder block, 16 classifier blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_heads: usize,
    pub isec_blocks: usize,
    pub classifier_blocks: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            num_heads: 8,
            isec_blocks: 1,
            classifier_blocks: 16,
            ffn_mult: 4,
            dropout: 0.2,
            variant: Variant::Multimodal,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and desk-scale experiments.
    pub fn tiny(dim: usize, num_heads: usize, classifier_blocks: usize) -> Self {
        Self {
            dim,
            num_heads,
            classifier_blocks,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            dim: self.dim,
            num_heads: self.num_heads,
            dropout_rate: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be positive".into()));
        }
        if self.variant.uses_isec() && self.isec_blocks == 0 {
            return Err(Error::Config("encoder variant needs isec_blocks >= 1".into()));
        }
        Ok(())
    }

    fn effective_classifier_blocks(&self) -> usize {
        if self.variant.uses_stack() {
            self.classifier_blocks
        } else {
            0
        }
    }
}

/// Per-sample model input: the two modality sequences.
#[derive(Debug, Clone)]
pub struct SampleInput<F> {
    pub text: EmbeddingSequence<F>,
    pub image: EmbeddingSequence<F>,
}

impl<F: Scalar> SampleInput<F> {
    pub fn from_review(review: &ChunkedReview) -> Result<Self> {
        Ok(Self {
            text: review.text_sequence()?,
            image: review.image_sequence()?,
        })
    }

    pub fn from_batch(batch: &PaddedBatch<F>, index: usize) -> Self {
        Self {
            text: batch.text_sequence(index),
            image: batch.image_sequence(index),
        }
    }
}

pub(crate) struct ModelCache<F> {
    isec: Option<IsecCache<F>>,
    classifier: ClassifierCache<F>,
    // encoder output rows start here in the classifier input
    isec_offset: usize,
}

/// All trainable parameters plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub isec: Option<IsecParameters<F>>,
    pub classifier: ClassifierParameters<F>,
}

impl<F: Scalar> Model<F> {
    /// Glorot-initialized model, reproducible from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let isec = config
            .variant
            .uses_isec()
            .then(|| IsecParameters::init(config.dim, config.isec_blocks, &mut rng));
        let classifier = ClassifierParameters::init(
            config.dim,
            config.effective_classifier_blocks(),
            config.dim * config.ffn_mult,
            &mut rng,
        );
        Ok(Self {
            config,
            isec,
            classifier,
        })
    }

    /// A model of the same shape with every entry zero, used as a gradient
    /// accumulator.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            isec: config
                .variant
                .uses_isec()
                .then(|| IsecParameters::zeros(config.dim, config.isec_blocks)),
            classifier: ClassifierParameters::zeros(
                config.dim,
                config.effective_classifier_blocks(),
                config.dim * config.ffn_mult,
            ),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    pub fn params(&self) -> Vec<ParamRef<'_, F>> {
        let mut sink = ParamSink::new();
        if let Some(isec) = &self.isec {
            isec.visit(&mut sink);
        }
        self.classifier.visit(&mut sink);
        sink.items
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        let mut sink = ParamSinkMut::new();
        if let Some(isec) = &mut self.isec {
            isec.visit_mut(&mut sink);
        }
        self.classifier.visit_mut(&mut sink);
        sink.items
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for p in self.params_mut() {
            p.values.fill(F::zero());
        }
    }

    pub(crate) fn forward_cached(
        &self,
        input: &SampleInput<F>,
        mode: &mut ForwardMode<'_>,
    ) -> Result<(LogitsMatrix<F>, ModelCache<F>)> {
        let cfg = self.config.attention();
        let variant = self.config.variant;
        let (image, isec_cache) = match (&self.isec, variant.uses_image()) {
            (Some(p), true) => {
                let (y, c) = isec_forward_cached(&input.image, p, &cfg, mode)?;
                (Some(y), Some(c))
            }
            (None, true) => (Some(input.image.clone()), None),
            (_, false) => (None, None),
        };
        let (tokens, isec_offset) = match (variant.uses_text(), image) {
            (true, Some(img)) => (fuse(&input.text, &img)?, input.text.len()),
            (true, None) => (input.text.clone(), input.text.len()),
            (false, Some(img)) => (img, 0),
            (false, None) => unreachable!("every variant reads at least one modality"),
        };
        let (logits, classifier) = classify_forward_cached(&tokens, &self.classifier, &cfg, mode)?;
        Ok((
            logits,
            ModelCache {
                isec: isec_cache,
                classifier,
                isec_offset,
            },
        ))
    }

    pub(crate) fn backward(&self, cache: &ModelCache<F>, dlogits: &ndarray::Array2<F>, grads: &mut Model<F>) {
        let cfg = self.config.attention();
        let dtokens = classify_backward(dlogits, &cache.classifier, &self.classifier, &cfg, &mut grads.classifier);
        if let (Some(c), Some(p), Some(g)) = (&cache.isec, &self.isec, &mut grads.isec) {
            let dy = dtokens.slice(s![cache.isec_offset.., ..]).to_owned();
            isec_backward(&dy, c, p, &cfg, g);
        }
    }

    /// Multitask loss of one sample. Its gradient, multiplied by `scale`, is
    /// added into `grads` (which must share this model's configuration).
    pub fn accumulate_gradient(
        &self,
        input: &SampleInput<F>,
        gold: &AspectLabelVector,
        mode: &mut ForwardMode<'_>,
        scale: F,
        grads: &mut Model<F>,
    ) -> Result<F> {
        if grads.config != self.config {
            return Err(Error::Config("gradient holder built for a different configuration".into()));
        }
        let (logits, cache) = self.forward_cached(input, mode)?;
        let (loss, dlogits) = multitask_loss_grad(&logits, gold);
        self.backward(&cache, &dlogits.mapv(|v| v * scale), grads);
        Ok(loss)
    }

    /// Inference forward pass.
    pub fn forward(&self, input: &SampleInput<F>) -> Result<LogitsMatrix<F>> {
        self.forward_cached(input, &mut ForwardMode::Eval).map(|(l, _)| l)
    }

    pub fn forward_with_mode(&self, input: &SampleInput<F>, mode: &mut ForwardMode<'_>) -> Result<LogitsMatrix<F>> {
        self.forward_cached(input, mode).map(|(l, _)| l)
    }

    /// Inference over every row of a padded batch.
    pub fn forward_batch(&self, batch: &PaddedBatch<F>) -> Result<Vec<LogitsMatrix<F>>> {
        (0..batch.batch_size())
            .map(|b| self.forward(&SampleInput::from_batch(batch, b)))
            .collect()
    }

    pub fn predict_review(&self, review: &ChunkedReview) -> Result<LogitsMatrix<F>> {
        self.forward(&SampleInput::from_review(review)?)
    }
}
