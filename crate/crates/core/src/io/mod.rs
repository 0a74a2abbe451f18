//! File formats and dataset plumbing.

pub mod annotations;
pub mod checkpoint;
pub mod folds;
pub mod manifest;
pub mod npy;
pub mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use annotations::{format_beats, parse_annotations, read_annotations, write_beats};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use folds::split_folds;
pub use manifest::{Manifest, ManifestEntry};
pub use npy::{read_features, write_features};
pub use synth::{generate_synthetic, write_synthetic, SynthPiece, SynthSpec};

/// Writes through a sibling temporary file and renames it into place, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
