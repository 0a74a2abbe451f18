//! Binary model checkpoints.
//!
//! ```text
//! "BFM1" | u32 version | u64 payload length | payload | u32 CRC-32 of payload
//! payload = u32 meta length | meta JSON | u32 tensor count | tensor*
//! tensor  = u16 name length | name (UTF-8) | u8 rank | u32 dim * rank | f64 value * prod(dims)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::TensorStore;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"BFM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// `None` when no validation epoch ran.
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub channels: usize,
    pub features: usize,
    pub frame_rate_hz: f64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&ckpt.meta)?;
    let tensors = ckpt.model.checkpoint_tensors();
    let mut payload = Vec::new();
    payload.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    payload.extend_from_slice(&meta);
    payload.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, data) in &tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::InvalidInput(format!("tensor name too long: {name}")))?;
        payload.extend_from_slice(&name_len.to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.push(dims.len() as u8);
        for &d in dims {
            let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} of {name} too large")))?;
            payload.extend_from_slice(&d.to_le_bytes());
        }
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(payload.len() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8], source: &str) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic(source.to_string()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let len = usize::try_from(r.u64()?).map_err(|_| Error::Header("payload length overflows".into()))?;
    let payload = r.take(len)?;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(Error::Header(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut p = Reader { bytes: payload, pos: 0 };
    let meta_len = p.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(p.take(meta_len)?)?;
    let count = p.u32()?;
    let mut store = TensorStore::default();
    for _ in 0..count {
        let name_len = p.u16()? as usize;
        let name = std::str::from_utf8(p.take(name_len)?)
            .map_err(|_| Error::Header("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = p.u8()? as usize;
        let dims = (0..rank).map(|_| p.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let values = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Header(format!("tensor {name} is too large")))?;
        let data = p
            .take(values)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(name, dims, data)?;
    }
    if p.pos != payload.len() {
        return Err(Error::Header("unused bytes after the last tensor".into()));
    }
    let model = Model::load(&mut store)?;
    if model.classifier.input_dim() != meta.channels * meta.features {
        return Err(Error::Shape(format!(
            "classifier expects {} inputs but metadata says {}x{}",
            model.classifier.input_dim(),
            meta.channels,
            meta.features
        )));
    }
    Ok(Checkpoint { model, meta })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msam::AblationMask;

    fn sample(mask: AblationMask) -> Checkpoint {
        let cfg = ModelConfig {
            hidden: 5,
            ..ModelConfig::default()
        };
        Checkpoint {
            model: Model::init(3, 4, &cfg, mask, 9).unwrap(),
            meta: CheckpointMeta {
                model_config: cfg,
                train_config: TrainConfig::default(),
                best_val_loss: Some(0.25),
                best_epoch: Some(3),
                seed: 9,
                channels: 3,
                features: 4,
                frame_rate_hz: 50.0,
            },
        }
    }

    #[test]
    fn round_trip() {
        for mask in AblationMask::table_order() {
            let c = sample(mask);
            assert_eq!(decode(&encode(&c).unwrap(), "mem").unwrap(), c);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&sample(AblationMask::FULL)).unwrap();
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode(&flipped, "mem"), Err(Error::Checksum { .. })));
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&future, "mem"), Err(Error::Version { found: 2, .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 3], "mem"), Err(Error::Truncated { .. })));
        assert!(matches!(decode(b"XXXX", "mem"), Err(Error::BadMagic(_))));
    }
}
