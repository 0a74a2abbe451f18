//! NPY version 1.0, restricted to C-order little-endian `f4` arrays.
//!
//! Layout: `\x93NUMPY`, major 1, minor 0, u16 LE header length, an ASCII Python dict
//! `{'descr': '<f4', 'fortran_order': False, 'shape': (n, f, t), }` padded with spaces and ending
//! in `\n` so that the data starts on a 64-byte boundary, then the values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// An array of any rank as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} does not hold {} values",
            data.len()
        )));
    }
    let dims = match shape {
        [d] => format!("({d},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    header.push('\n');
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the small Python-literal dict used by NPY headers.
fn parse_header(text: &str) -> Result<Header> {
    let bad = |msg: &str| Error::Header(msg.to_string());
    let body = text
        .trim_end_matches(['\n', ' '])
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dict"))?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim();
    while !rest.is_empty() {
        let quote = rest.chars().next().filter(|c| *c == '\'' || *c == '"').ok_or_else(|| bad("expected a quoted key"))?;
        let end = rest[1..].find(quote).ok_or_else(|| bad("unterminated key"))? + 1;
        let key = &rest[1..end];
        rest = rest[end + 1..].trim_start().strip_prefix(':').ok_or_else(|| bad("expected ':'"))?.trim_start();
        let value_end = if rest.starts_with('(') {
            rest.find(')').ok_or_else(|| bad("unterminated tuple"))? + 1
        } else if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
            rest[1..].find(q).ok_or_else(|| bad("unterminated string"))? + 2
        } else {
            rest.find(',').unwrap_or(rest.len())
        };
        let value = rest[..value_end].trim();
        match key {
            "descr" => {
                let quoted = value.len() >= 2 && (value.starts_with('\'') || value.starts_with('"'));
                if !quoted {
                    return Err(bad("descr must be a string"));
                }
                descr = Some(value[1..value.len() - 1].to_string());
            }
            "fortran_order" => {
                fortran = Some(match value {
                    "True" => true,
                    "False" => false,
                    _ => return Err(bad("fortran_order must be True or False")),
                })
            }
            "shape" => {
                let inner = value
                    .strip_prefix('(')
                    .and_then(|v| v.strip_suffix(')'))
                    .ok_or_else(|| bad("shape must be a tuple"))?;
                let dims = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| bad("shape entries must be integers")))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
            }
            _ => return Err(bad(&format!("unknown key {key:?}"))),
        }
        rest = rest[value_end..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing descr"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

pub fn decode(bytes: &[u8], source: &str) -> Result<NpyArray> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic(source.to_string()));
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated {
            expected: 10,
            found: bytes.len(),
        });
    }
    if bytes[6] != 1 {
        return Err(Error::Version {
            found: bytes[6] as u32,
            supported: 1,
        });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(Error::Truncated {
            expected: data_start,
            found: bytes.len(),
        });
    }
    let text = std::str::from_utf8(&bytes[10..data_start]).map_err(|_| Error::Header("header is not ASCII".into()))?;
    let header = parse_header(text)?;
    if header.descr != "<f4" {
        return Err(Error::Dtype(header.descr));
    }
    if header.fortran_order {
        return Err(Error::Header("Fortran-ordered arrays are not supported".into()));
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Header("shape overflows".into()))?;
    let payload = &bytes[data_start..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::Header("shape overflows".into()))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Header(format!(
            "{} trailing bytes after the array data",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    frame_rate_hz: f64,
}

/// Path of the optional metadata file next to a feature file (`x.npy` -> `x.json`).
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Reads a `[n, f, t]` feature file. The frame rate comes from `frame_rate_hz` when given,
/// otherwise from the sidecar metadata file.
pub fn read_features(path: &Path, frame_rate_hz: Option<f64>) -> Result<FeatureTensor> {
    let bytes = read_file(path)?;
    let array = decode(&bytes, &path.display().to_string())?;
    if array.shape.len() != 3 {
        return Err(Error::Rank(array.shape.len()));
    }
    let rate = match frame_rate_hz {
        Some(r) => r,
        None => {
            let side = sidecar_path(path);
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            serde_json::from_str::<Sidecar>(&text)?.frame_rate_hz
        }
    };
    let (n, f, t) = (array.shape[0], array.shape[1], array.shape[2]);
    FeatureTensor::new(n, f, t, array.data.into_iter().map(f64::from).collect(), rate)
}

/// Writes features as `f32` plus the sidecar holding the frame rate. Values are rounded to
/// single precision.
pub fn write_features(path: &Path, features: &FeatureTensor) -> Result<()> {
    let data: Vec<f32> = features.data().iter().map(|&v| v as f32).collect();
    write_atomic(path, &encode(&features.shape(), &data)?)?;
    let side = Sidecar {
        frame_rate_hz: features.frame_rate_hz(),
    };
    write_atomic(&sidecar_path(path), serde_json::to_string(&side)?.as_bytes())
}
