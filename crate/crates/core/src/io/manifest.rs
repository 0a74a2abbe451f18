//! JSON dataset manifests. Paths are stored relative to the manifest file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, write_atomic};
use crate::error::{Error, Result};

pub const NUM_FOLDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub piece_id: String,
    pub feature_path: String,
    pub annotation_path: String,
    pub fold: usize,
    /// Optional fixed role: `train`, `val` or `test`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub frame_rate_hz: f64,
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {}", self.frame_rate_hz)));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.piece_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate piece_id {:?}", e.piece_id)));
            }
            if e.fold >= NUM_FOLDS {
                return Err(Error::InvalidInput(format!(
                    "piece {:?} has fold {} outside 0..{NUM_FOLDS}",
                    e.piece_id, e.fold
                )));
            }
            if let Some(s) = &e.split {
                if !matches!(s.as_str(), "train" | "val" | "test") {
                    return Err(Error::InvalidInput(format!(
                        "piece {:?} has unknown split {s:?}",
                        e.piece_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn feature_path(&self, e: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&e.feature_path)
    }

    pub fn annotation_path(&self, e: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&e.annotation_path)
    }

    /// Parses and validates a manifest, checking that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut m: Manifest = serde_json::from_slice(&bytes)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        for e in &m.entries {
            for p in [m.feature_path(e), m.annotation_path(e)] {
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
