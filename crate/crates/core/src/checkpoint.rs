//! Model checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic         4 bytes "MCCK"
//! version       u32     1
//! header_len    u32
//! header        JSON    {"config": ModelConfig, "tensors": [{"name", "group", "shape"}]}
//! tensor data   f32 × Σ|shape|, in header order
//! ```
//!
//! Loading rebuilds the model from the stored config and refuses the file
//! unless every tensor name and shape matches.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamGroup;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
}

fn header_of<F: Scalar>(model: &Model<F>) -> Header {
    Header {
        config: model.config,
        tensors: model
            .params()
            .into_iter()
            .map(|p| TensorInfo {
                name: p.name,
                group: p.group,
                shape: p.shape,
            })
            .collect(),
    }
}

pub fn encode_checkpoint<F: Scalar>(model: &Model<F>) -> Vec<u8> {
    let header = serde_json::to_vec(&header_of(model)).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + 4 * model.num_parameters());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        for v in p.values {
            out.extend_from_slice(&v.to_f32_value().to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<F: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<F>> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing MCCK magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| bad(format!("bad header: {e}")))?;
    let mut model = Model::<F>::zeros(header.config)?;
    let expected = header_of(&model).tensors;
    if expected != header.tensors {
        return Err(bad("tensor list does not match the stored configuration".into()));
    }
    let data = &bytes[12 + header_len..];
    if data.len() != 4 * model.num_parameters() {
        return Err(bad(format!(
            "expected {} bytes of tensor data, found {}",
            4 * model.num_parameters(),
            data.len()
        )));
    }
    let mut words = data.chunks_exact(4);
    for p in model.params_mut() {
        for v in p.values.iter_mut() {
            let w = words.next().expect("length checked");
            let x = f32::from_le_bytes(w.try_into().expect("4 bytes"));
            if !x.is_finite() {
                return Err(bad(format!("non-finite value in {}", p.name)));
            }
            *v = F::from_f32_value(x);
        }
    }
    Ok(model)
}

/// Writes atomically: the bytes go to a sibling temp file that is renamed
/// over `path`.
pub fn save_checkpoint<F: Scalar>(model: &Model<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(model))?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Model<F>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn f32_model_round_trips_exactly() {
        for v in Variant::ALL {
            let m = Model::<f32>::new(ModelConfig::tiny(8, 2, 2).with_variant(v), 11).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("checkpoint");
            save_checkpoint(&m, &p).unwrap();
            assert_eq!(load_checkpoint::<f32>(&p).unwrap(), m);
            assert!(!p.with_extension("tmp").exists());
        }
    }

    #[test]
    fn tampered_files_are_rejected() {
        let m = Model::<f32>::new(ModelConfig::tiny(8, 2, 1), 0).unwrap();
        let bytes = encode_checkpoint(&m);
        let p = Path::new("ckpt");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bad, p).is_err());
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 4], p).is_err());

        // a header whose shapes disagree with its config
        let mut other = Model::<f32>::new(ModelConfig::tiny(8, 2, 2), 0).unwrap();
        other.config.classifier_blocks = 1;
        assert!(decode_checkpoint::<f32>(&encode_checkpoint(&other), p).is_err());
    }
}
