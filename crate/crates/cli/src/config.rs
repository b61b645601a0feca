//! TOML run configuration with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use complaint_core::model::{ModelConfig, Variant};
use complaint_core::synthetic::SynthSpec;
use complaint_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::failure::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Architecture keys. Dropout lives under `[train]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: usize,
    pub num_heads: usize,
    pub isec_blocks: usize,
    pub classifier_blocks: usize,
    pub ffn_mult: usize,
    pub variant: Variant,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            dim: d.dim,
            num_heads: d.num_heads,
            isec_blocks: d.isec_blocks,
            classifier_blocks: d.classifier_blocks,
            ffn_mult: d.ffn_mult,
            variant: d.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub ablate: AblateSection,
}

impl RunConfig {
    /// Reads `file` (if any), applies `overrides` in order and validates the
    /// result against the schema.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Data(anyhow::anyhow!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| Failure::Usage(format!("invalid TOML in {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Value::Table(table)
            .try_into()
            .map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.model.dim,
            num_heads: self.model.num_heads,
            isec_blocks: self.model.isec_blocks,
            classifier_blocks: self.model.classifier_blocks,
            ffn_mult: self.model.ffn_mult,
            dropout: self.train.dropout,
            variant: self.model.variant,
        }
    }

    /// Errors listing every key in `keys` that is unset.
    pub fn require(&self, keys: &[&str]) -> Result<(), Failure> {
        let missing: Vec<&str> = keys
            .iter()
            .copied()
            .filter(|k| match *k {
                "paths.manifest" => self.paths.manifest.is_none(),
                "paths.out_dir" => self.paths.out_dir.is_none(),
                "paths.checkpoint" => self.paths.checkpoint.is_none(),
                other => unreachable!("no presence check for {other}"),
            })
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Failure::Usage(format!("missing required keys: {}", missing.join(", "))))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }
}

/// Sets `a.b.c = value`, parsing the value as a TOML literal and falling back
/// to a plain string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), Failure> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override `{spec}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Failure::Usage(format!("bad override key `{key}`")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
