//! Domain types, label codec, manifest and embedding file format.

pub mod label;
pub mod manifest;
pub mod mceb;
pub mod review;

pub use label::{
    decode_label, encode_label, AspectCatalog, AspectLabelVector, AspectState, CANONICAL_ASPECTS,
    NUM_ASPECTS, NUM_STATES,
};
pub use manifest::{DatasetManifest, SampleEntry, Split, SplitCounts, MANIFEST_VERSION};
pub use mceb::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings};
pub use review::{Chunk, ChunkedReview, EmbeddingSequence, MAX_CHUNK_SPAN_S};
