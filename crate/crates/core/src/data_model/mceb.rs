//! Binary embedding file format ("MCEB").
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "MCEB"
//! version      u32      1
//! dim          u32
//! chunk_count  u32
//! chunk_count × { start_s f32, end_s f32, text f32 × dim, image f32 × dim }
//! ```
//!
//! Neither the review id nor the gold label is stored; the id is taken from
//! the file stem and labels live in the dataset manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::review::{Chunk, ChunkedReview};
use crate::error::{Error, Result};

pub const MCEB_MAGIC: [u8; 4] = *b"MCEB";
pub const MCEB_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Serializes a review into MCEB bytes.
pub fn encode_embeddings(review: &ChunkedReview) -> Result<Vec<u8>> {
    review.validate()?;
    let dim = review.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + review.num_chunks() * (8 + 8 * dim));
    out.extend_from_slice(&MCEB_MAGIC);
    out.extend_from_slice(&MCEB_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&u32_of(review.num_chunks(), "chunk count")?.to_le_bytes());
    for c in &review.chunks {
        out.extend_from_slice(&c.start_s.to_le_bytes());
        out.extend_from_slice(&c.end_s.to_le_bytes());
        for v in c.text_embedding.iter().chain(&c.image_embedding) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidReview(format!("{what} {v} exceeds u32")))
}

/// Writes a review to `path`.
pub fn write_embeddings(review: &ChunkedReview, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(review)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

/// Reads a review from `path`; the review id is the file stem.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<ChunkedReview> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_embeddings(&bytes, id, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take4(&mut self, what: &str) -> Result<[u8; 4]> {
        let end = self.offset + 4;
        let slice = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| self.err(self.offset, format!("truncated while reading {what}")))?;
        self.offset = end;
        Ok(slice.try_into().expect("4-byte slice"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take4(what).map(u32::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.take4(what).map(f32::from_le_bytes)
    }
}

/// Parses MCEB bytes; `path` is only used in error messages.
pub fn decode_embeddings(bytes: &[u8], review_id: String, path: &Path) -> Result<ChunkedReview> {
    let mut cur = Cursor {
        bytes,
        offset: 0,
        path,
    };
    let magic = cur.take4("magic")?;
    if magic != MCEB_MAGIC {
        return Err(cur.err(0, format!("bad magic {magic:02x?}")));
    }
    let version = cur.u32("version")?;
    if version != MCEB_VERSION {
        return Err(cur.err(4, format!("unsupported version {version}")));
    }
    let dim = cur.u32("dim")? as usize;
    if dim == 0 {
        return Err(cur.err(8, "dim is zero"));
    }
    let count = cur.u32("chunk count")? as usize;
    if count == 0 {
        return Err(cur.err(12, "chunk count is zero"));
    }
    let expected = (count as u128) * (8 + 8 * dim as u128) + HEADER_LEN as u128;
    if (bytes.len() as u128) < expected {
        return Err(cur.err(
            bytes.len(),
            format!("truncated: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if (bytes.len() as u128) > expected {
        return Err(cur.err(expected as usize, "trailing bytes after last chunk"));
    }
    let mut chunks = Vec::with_capacity(count);
    for _ in 0..count {
        let start_s = cur.f32("start_s")?;
        let end_s = cur.f32("end_s")?;
        let read_vec = |cur: &mut Cursor<'_>| -> Result<Vec<f32>> {
            (0..dim).map(|_| cur.f32("embedding")).collect()
        };
        let text_embedding = read_vec(&mut cur)?;
        let image_embedding = read_vec(&mut cur)?;
        chunks.push(Chunk {
            start_s,
            end_s,
            text_embedding,
            image_embedding,
        });
    }
    ChunkedReview::new(review_id, chunks, None)
}
