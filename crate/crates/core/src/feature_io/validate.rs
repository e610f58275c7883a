use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use super::blob::{BlobHeader, HEADER_LEN};
use super::{layer_file_name, Manifest, FORMAT_VERSION, MANIFEST_FILE};
use crate::error::Error;

/// A single invariant violation found in an archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    ManifestUnreadable {
        reason: String,
    },
    UnsupportedVersion {
        found: u64,
    },
    LayerIndexNotContiguous {
        position: usize,
        index: u32,
    },
    ZeroDimension {
        layer_index: u32,
    },
    LayerTooLarge {
        layer_index: u32,
    },
    DuplicateSampleId {
        id: String,
    },
    LayerBlobUnreadable {
        layer_index: u32,
        reason: String,
    },
    HeaderMismatch {
        layer_index: u32,
        reason: String,
    },
    SizeMismatch {
        layer_index: u32,
        expected: u64,
        actual: u64,
    },
    NonFiniteValue {
        layer_index: u32,
        sample_id: String,
        count: usize,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::ManifestUnreadable { reason } => write!(f, "manifest unreadable: {reason}"),
            Finding::UnsupportedVersion { found } => {
                write!(
                    f,
                    "unsupported format version {found} (supported: {FORMAT_VERSION})"
                )
            }
            Finding::LayerIndexNotContiguous { position, index } => {
                write!(f, "layer at position {position} has index {index}")
            }
            Finding::ZeroDimension { layer_index } => {
                write!(f, "layer {layer_index} has a zero dimension")
            }
            Finding::LayerTooLarge { layer_index } => {
                write!(
                    f,
                    "layer {layer_index} has more elements than fit in 32 bits"
                )
            }
            Finding::DuplicateSampleId { id } => write!(f, "duplicate sample id {id:?}"),
            Finding::LayerBlobUnreadable {
                layer_index,
                reason,
            } => {
                write!(f, "layer {layer_index} blob unreadable: {reason}")
            }
            Finding::HeaderMismatch {
                layer_index,
                reason,
            } => {
                write!(f, "layer {layer_index} header mismatch: {reason}")
            }
            Finding::SizeMismatch {
                layer_index,
                expected,
                actual,
            } => write!(
                f,
                "layer {layer_index} blob is {actual} bytes, expected {expected}"
            ),
            Finding::NonFiniteValue {
                layer_index,
                sample_id,
                count,
            } => write!(
                f,
                "sample {sample_id:?} has {count} non-finite value(s) at layer {layer_index}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks every archive invariant without failing fast. Problems are
/// returned as findings; an empty report means the archive is well formed
/// and every value is finite.
pub fn validate_archive(root: impl AsRef<Path>) -> ValidationReport {
    let root = root.as_ref();
    let mut findings = Vec::new();

    let manifest_path = root.join(MANIFEST_FILE);
    let manifest: Manifest = match fs::read_to_string(&manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|text| serde_json::from_str(&text).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(reason) => {
            findings.push(Finding::ManifestUnreadable { reason });
            return ValidationReport { findings };
        }
    };

    if manifest.format_version != FORMAT_VERSION {
        findings.push(Finding::UnsupportedVersion {
            found: manifest.format_version as u64,
        });
    }

    let mut seen = HashSet::new();
    for sample in &manifest.samples {
        if !seen.insert(sample.id.as_str()) {
            findings.push(Finding::DuplicateSampleId {
                id: sample.id.clone(),
            });
        }
    }

    let n_samples = manifest.samples.len() as u64;
    for (position, layer) in manifest.layers.iter().enumerate() {
        if layer.index as usize != position {
            findings.push(Finding::LayerIndexNotContiguous {
                position,
                index: layer.index,
            });
        }
        if layer.channels == 0 || layer.width == 0 || layer.height == 0 {
            findings.push(Finding::ZeroDimension {
                layer_index: layer.index,
            });
            continue;
        }
        let numel = layer.channels as u64 * layer.width as u64 * layer.height as u64;
        if numel > u32::MAX as u64 {
            findings.push(Finding::LayerTooLarge {
                layer_index: layer.index,
            });
            continue;
        }

        let path = root.join(layer_file_name(layer.index));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                findings.push(Finding::LayerBlobUnreadable {
                    layer_index: layer.index,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let header = match BlobHeader::parse(&bytes, &path) {
            Ok(h) => h,
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                findings.push(Finding::SizeMismatch {
                    layer_index: layer.index,
                    expected,
                    actual,
                });
                continue;
            }
            Err(e) => {
                findings.push(Finding::LayerBlobUnreadable {
                    layer_index: layer.index,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let expected_header = BlobHeader::for_layer(layer, n_samples);
        if header != expected_header {
            findings.push(Finding::HeaderMismatch {
                layer_index: layer.index,
                reason: format!("header {header:?} but manifest implies {expected_header:?}"),
            });
            continue;
        }
        let sample_len = numel as usize;
        let expected = HEADER_LEN as u64 + n_samples * sample_len as u64 * 4;
        if bytes.len() as u64 != expected {
            findings.push(Finding::SizeMismatch {
                layer_index: layer.index,
                expected,
                actual: bytes.len() as u64,
            });
            continue;
        }

        let data = super::decode_f32s(&bytes[HEADER_LEN..]);
        for (sample, values) in manifest.samples.iter().zip(data.chunks_exact(sample_len)) {
            let count = values.iter().filter(|v| !v.is_finite()).count();
            if count > 0 {
                findings.push(Finding::NonFiniteValue {
                    layer_index: layer.index,
                    sample_id: sample.id.clone(),
                    count,
                });
            }
        }
    }

    ValidationReport { findings }
}
