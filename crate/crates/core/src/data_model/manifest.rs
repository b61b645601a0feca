//! JSON dataset manifest.
//!
//! ```json
//! {
//!   "version": 1,
//!   "aspect_catalog": ["Transaction", "CustomerService", "ClaimedBenefit", "ServiceTypes", "Miscellaneous"],
//!   "samples": [
//!     {"review_id": "r0001", "embedding_file": "emb/r0001.mceb", "gold_label": [2,0,2,2,0], "split": "train"}
//!   ]
//! }
//! ```
//!
//! Relative `embedding_file` paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::label::{AspectCatalog, AspectLabelVector};
use super::mceb::read_embeddings;
use super::review::ChunkedReview;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub review_id: String,
    pub embedding_file: PathBuf,
    pub gold_label: AspectLabelVector,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub aspect_catalog: AspectCatalog,
    pub samples: Vec<SampleEntry>,
    /// Directory relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(samples: Vec<SampleEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            aspect_catalog: AspectCatalog::default(),
            samples,
            base_dir: base_dir.into(),
        }
    }

    /// Loads and validates a manifest. Label bounds are checked during
    /// parsing; ids must be unique and every embedding file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(path)?;
        let c = m.split_counts();
        log::info!(
            "loaded manifest {}: {} train / {} test samples",
            path.display(),
            c.train,
            c.test
        );
        Ok(m)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        if self.version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.review_id.as_str()) {
                return Err(bad(format!("duplicate review_id `{}`", s.review_id)));
            }
            let file = self.resolve(&s.embedding_file);
            if !file.is_file() {
                return Err(bad(format!(
                    "embedding file for `{}` not found: {}",
                    s.review_id,
                    file.display()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        }
    }

    pub fn split_counts(&self) -> SplitCounts {
        self.samples
            .iter()
            .fold(SplitCounts::default(), |mut c, s| {
                match s.split {
                    Split::Train => c.train += 1,
                    Split::Test => c.test += 1,
                }
                c
            })
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Reads every review of `split`, attaching id and gold label.
    pub fn load_split(&self, split: Split) -> Result<Vec<ChunkedReview>> {
        self.entries(split)
            .map(|s| {
                let mut r = read_embeddings(self.resolve(&s.embedding_file))?;
                r.review_id = s.review_id.clone();
                r.gold_label = Some(s.gold_label);
                Ok(r)
            })
            .collect()
    }
}
