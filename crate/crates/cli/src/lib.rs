//! File formats, dataset loading and the command implementations behind the
//! `bilinear` binary.
//!
//! - [`container`]: the `BLNR` tensor container used for models, spectra and
//!   token weights.
//! - [`render`]: binary PPM rendering of input-space features.
//! - [`tables`]: CSV writers for sweeps, similarity and n-gram tables.
//! - [`tree`]: JSON export of decompilation trees.
//! - [`data`]: IDX directory loading (raw or gzipped).
//! - [`runtime`]: threaded, deterministic training runtime.

pub mod commands;
pub mod container;
pub mod data;
pub mod render;
pub mod runtime;
pub mod tables;
pub mod tree;

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bad magic: expected \"BLNR\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {found}, expected {expected}")]
    Version { expected: u32, found: u32 },
    #[error("truncated container: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("container has {extra} unexpected trailing bytes")]
    TrailingBytes { extra: u64 },
    #[error("inconsistent shapes: {0}")]
    Shape(String),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] bilinear_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
