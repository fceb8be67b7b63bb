//! On-disk formats: binary embedding files, coordinate CSVs, checkpoints,
//! flat config files, JSON-lines reports and heatmap grids.
//!
//! Every writer goes through a temporary file in the destination directory
//! followed by an atomic rename, so readers never observe partial files.

mod checkpoint;
mod config;
mod coords;
mod embeddings;
mod heatmap;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{apply_config, load_config, parse_config, ConfigMap};
pub use coords::{format_coords, parse_coords, read_coords, write_coords, CoordRecord};
pub use embeddings::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, EmbeddingFile, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use heatmap::{encode_heatmap_pgm, format_heatmap_csv, grid_coords, heatmap, write_heatmap_csv, write_heatmap_pgm, Heatmap};

/// Prefixes an I/O error with the path it concerns.
pub(crate) fn with_path(path: &Path) -> impl Fn(std::io::Error) -> crate::GeoError + '_ {
    move |e| crate::GeoError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(with_path(path))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    // temp files default to owner-only; outputs get the usual mode (less umask)
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let mut tmp = builder.tempfile_in(dir).map_err(with_path(path))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| with_path(path)(e.error))?;
    Ok(())
}

/// Appends one JSON object per line.
pub fn append_json_line<T: serde::Serialize>(path: impl AsRef<Path>, record: &T) -> Result<()> {
    let mut line = serde_json::to_string(record)
        .map_err(|e| crate::GeoError::Format(format!("cannot serialize report: {e}")))?;
    line.push('\n');
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    Ok(())
}
