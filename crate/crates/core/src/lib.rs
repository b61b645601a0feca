//! Multimodal aspect-based complaint identification.
//!
//! Reviews arrive as chunked transcript and frame embeddings. Frame
//! embeddings pass through a trainable segment encoder (CLS token,
//! positional codes, multi-head attention), are concatenated with the
//! transcript tokens and classified by a transformer stack into a 5×3
//! aspect/complaint matrix.
//!
//! Every numeric component is generic over [`Scalar`]; the aliases below fix
//! the common precisions.

pub mod ablation;
pub mod checkpoint;
pub mod chunking;
pub mod data_model;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod isec;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use data_model::{
    decode_label, encode_label, AspectCatalog, AspectLabelVector, AspectState, ChunkedReview,
    DatasetManifest, EmbeddingSequence, Split,
};
pub use error::{Error, Result};
pub use fusion::{LogitsMatrix, predict_labels, multitask_loss};
pub use model::{Model, ModelConfig, SampleInput, Variant};
pub use params::ParamGroup;
pub use scalar::Scalar;

/// Single-precision model, used for training and inference.
pub type Model32 = Model<f32>;
/// Double-precision model, used for gradient verification.
pub type Model64 = Model<f64>;
pub type Logits32 = LogitsMatrix<f32>;
pub type Logits64 = LogitsMatrix<f64>;
