//! In-memory datasets and piece-level split assignment.

use crate::beats::BeatSequence;
use crate::error::{Error, Result};
use crate::io::manifest::Manifest;
use crate::io::{read_annotations, read_features, SynthPiece};
use crate::tensor::FeatureTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub piece_id: String,
    pub fold: usize,
    pub split: Option<String>,
    pub features: FeatureTensor,
    pub beats: BeatSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub frame_rate_hz: f64,
    pub pieces: Vec<Piece>,
}

impl Dataset {
    /// Reads every feature and annotation file of a manifest.
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let pieces = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(Piece {
                    piece_id: e.piece_id.clone(),
                    fold: e.fold,
                    split: e.split.clone(),
                    features: read_features(&manifest.feature_path(e), Some(manifest.frame_rate_hz))?,
                    beats: read_annotations(&manifest.annotation_path(e))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            name: manifest.dataset.clone(),
            frame_rate_hz: manifest.frame_rate_hz,
            pieces,
        };
        ds.feature_dims()?;
        Ok(ds)
    }

    /// Wraps generated pieces, assigning folds round-robin in generation order.
    pub fn from_synthetic(name: &str, pieces: Vec<SynthPiece>, folds: &[usize]) -> Result<Self> {
        if folds.len() != pieces.len() {
            return Err(Error::Shape(format!("{} folds for {} pieces", folds.len(), pieces.len())));
        }
        let frame_rate_hz = pieces.first().map_or(1.0, |p| p.features.frame_rate_hz());
        Ok(Self {
            name: name.to_string(),
            frame_rate_hz,
            pieces: pieces
                .into_iter()
                .zip(folds)
                .map(|(p, &fold)| Piece {
                    piece_id: p.piece_id,
                    fold,
                    split: None,
                    features: p.features,
                    beats: p.beats,
                })
                .collect(),
        })
    }

    /// `(channels, features)` shared by all pieces.
    pub fn feature_dims(&self) -> Result<(usize, usize)> {
        let first = self
            .pieces
            .first()
            .ok_or_else(|| Error::EmptySplit("dataset has no pieces".into()))?;
        let dims = (first.features.n(), first.features.f());
        for p in &self.pieces {
            if (p.features.n(), p.features.f()) != dims {
                return Err(Error::Shape(format!(
                    "piece {} has {}x{} features, expected {}x{}",
                    p.piece_id,
                    p.features.n(),
                    p.features.f(),
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(dims)
    }
}

/// Piece indices per role. Every piece belongs to at most one role.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns pieces to train / validation / test.
///
/// Explicit split tags win. Otherwise pieces in `test_fold` are held out for testing and the
/// remaining pieces are ranked by the CRC-32 of their id; the first `ceil(val_fraction * N)`
/// become validation pieces.
pub fn assign_splits(ds: &Dataset, test_fold: Option<usize>, val_fraction: f64) -> Result<Splits> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let mut splits = Splits::default();
    let tagged = ds.pieces.iter().any(|p| p.split.is_some());
    let mut pool = Vec::new();
    for (i, p) in ds.pieces.iter().enumerate() {
        match p.split.as_deref() {
            Some("test") => splits.test.push(i),
            Some("val") => splits.val.push(i),
            Some("train") => splits.train.push(i),
            Some(other) => return Err(Error::InvalidInput(format!("unknown split {other:?}"))),
            None if Some(p.fold) == test_fold => splits.test.push(i),
            None if tagged => splits.train.push(i),
            None => pool.push(i),
        }
    }
    if !tagged {
        pool.sort_by_key(|&i| (crc32fast::hash(ds.pieces[i].piece_id.as_bytes()), ds.pieces[i].piece_id.clone()));
        let n_val = (val_fraction * pool.len() as f64).ceil() as usize;
        splits.val = pool[..n_val.min(pool.len())].to_vec();
        splits.train = pool[n_val.min(pool.len())..].to_vec();
        splits.val.sort_unstable();
        splits.train.sort_unstable();
    }
    check_exclusive(ds, &splits)?;
    if splits.train.is_empty() {
        return Err(Error::EmptySplit("no training pieces".into()));
    }
    Ok(splits)
}

/// Piece exclusivity: no piece id may occur in more than one role.
pub fn check_exclusive(ds: &Dataset, splits: &Splits) -> Result<()> {
    let mut seen = std::collections::HashMap::new();
    for (role, idx) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        for &i in idx {
            let id = &ds.pieces[i].piece_id;
            if let Some(prev) = seen.insert(id.as_str(), role) {
                return Err(Error::InvalidInput(format!("piece {id} assigned to both {prev} and {role}")));
            }
        }
    }
    Ok(())
}
