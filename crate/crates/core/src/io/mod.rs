//! Windows files, annotation conversion, model persistence and synthetic
//! datasets.

mod labelme;
mod model;
mod synth;
mod windows;

use std::path::PathBuf;

use thiserror::Error;

pub use labelme::{labelme_to_record, polygon_to_bbox};
pub use model::{from_model_bytes, load_model, save_model, to_model_bytes, ModelFile, MODEL_VERSION};
pub use synth::{generate_synthetic, Archetype};
pub use windows::{
    load_windows, load_windows_with, parse_windows_line, read_windows, save_windows, write_windows, BoxRecord,
    BoxSource, DatasetSplit, LoadOptions, LoadReport, LoadWarning, WindowsRecord, DEFAULT_BOX_CAP,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("holdout and test share {0} image ids")]
    OverlappingSplit(usize),
    #[error("expected a {expected} model file, found {found}")]
    WrongModelKind { expected: String, found: String },
    #[error("unsupported model file version {found} (this build reads version {expected})")]
    VersionMismatch { expected: u32, found: u64 },
    #[error("checksum error: {0}")]
    Checksum(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("image {image_id}: {message}")]
    Pixels { image_id: String, message: String },
    #[error(transparent)]
    Thing(#[from] crate::things::ThingError),
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<(), IoError> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => std::path::Path::new("."),
    };
    let file_err = |source| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err)?;
    tmp.write_all(bytes).map_err(file_err)?;
    tmp.as_file().sync_all().map_err(file_err)?;
    tmp.persist(path).map_err(|e| file_err(e.error))?;
    Ok(())
}
