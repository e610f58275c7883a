use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {}: expected {expected:?}, found {found:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} in {} (supported: {supported})", path.display())]
    UnsupportedVersion {
        path: PathBuf,
        found: u64,
        supported: u32,
    },

    #[error("malformed field in {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("tensor references undeclared layer {0}")]
    UnknownLayer(u32),

    #[error("tensor references undeclared sample {0:?}")]
    UnknownSample(String),

    #[error("dimension mismatch for {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate tensor for sample {sample_id:?} at layer {layer_index}")]
    DuplicateTensor { layer_index: u32, sample_id: String },

    #[error("missing tensor for sample {sample_id:?} at layer {layer_index}")]
    MissingTensor { layer_index: u32, sample_id: String },

    #[error("truncated layer blob {}: expected {expected} bytes, found {actual}", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("layer blob {} does not match the manifest: {reason}", path.display())]
    HeaderMismatch { path: PathBuf, reason: String },

    #[error("non-finite value in sample {sample_id:?} at layer {layer_index}")]
    NonFinite { layer_index: u32, sample_id: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sample {sample_id:?} has label {label} but only ID samples are allowed here")]
    LabelViolation { sample_id: String, label: String },

    #[error("layer mismatch: {0}")]
    LayerMismatch(String),

    #[error("no selected layer; run layer selection or set a forced layer")]
    SelectionUnset,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment (missing files, permissions) rather
    /// than of the data or configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
