//! Portable on-disk container for per-layer activations.
//!
//! An archive is a directory holding one `manifest.json` and one
//! `layer_<index>.bin` blob per declared layer:
//!
//! ```text
//! magic    "FARC"          4 bytes
//! version  u32             = 1
//! layer    u32
//! samples  u64
//! channels u32
//! width    u32
//! height   u32
//! data     f32 * samples * channels * width * height
//! ```
//!
//! All integers and floats are little-endian. Samples appear in manifest
//! order; within a sample the layout is channel-major, then row-major.

mod blob;
mod validate;

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use blob::{BlobHeader, HEADER_LEN, LAYER_MAGIC};
pub use validate::{validate_archive, Finding, ValidationReport};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn layer_file_name(index: u32) -> String {
    format!("layer_{index}.bin")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Id,
    Ood,
    Unknown,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Id => "id",
            Label::Ood => "ood",
            Label::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Tune,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Tune => "tune",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "tune" => Ok(Split::Tune),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Activation map dimensions: `channels` feature maps of `width × height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl Shape {
    pub fn new(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
        }
    }

    pub fn spatial(&self) -> usize {
        self.width * self.height
    }

    pub fn numel(&self) -> usize {
        self.channels * self.spatial()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDescriptor {
    pub index: u32,
    pub name: String,
    pub channels: u32,
    pub width: u32,
    pub height: u32,
}

impl LayerDescriptor {
    pub fn shape(&self) -> Shape {
        Shape::new(
            self.channels as usize,
            self.width as usize,
            self.height as usize,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model_id: String,
    pub layers: Vec<LayerDescriptor>,
    pub samples: Vec<SampleRecord>,
    pub created_utc: String,
}

impl Manifest {
    pub fn new(
        model_id: impl Into<String>,
        layers: Vec<LayerDescriptor>,
        samples: Vec<SampleRecord>,
        created_utc: impl Into<String>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_id: model_id.into(),
            layers,
            samples,
            created_utc: created_utc.into(),
        }
    }

    /// Checks the structural invariants: contiguous 0-based layer indices,
    /// non-zero dimensions and unique sample ids.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidManifest(format!(
                "format_version {} (supported: {FORMAT_VERSION})",
                self.format_version
            )));
        }
        for (position, layer) in self.layers.iter().enumerate() {
            if layer.index as usize != position {
                return Err(Error::InvalidManifest(format!(
                    "layer at position {position} has index {}; indices must be 0-based and contiguous",
                    layer.index
                )));
            }
            if layer.channels == 0 || layer.width == 0 || layer.height == 0 {
                return Err(Error::InvalidManifest(format!(
                    "layer {} has a zero dimension",
                    layer.index
                )));
            }
            let numel = layer.channels as u64 * layer.width as u64 * layer.height as u64;
            if numel > u32::MAX as u64 {
                return Err(Error::InvalidManifest(format!(
                    "layer {} has {numel} elements per sample, more than fits in 32 bits",
                    layer.index
                )));
            }
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for sample in &self.samples {
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate sample id {:?}",
                    sample.id
                )));
            }
        }
        Ok(())
    }

    pub fn layer(&self, index: u32) -> Option<&LayerDescriptor> {
        self.layers.get(index as usize)
    }

    pub fn sample_position(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }
}

/// One sample's activation at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub layer_index: u32,
    pub sample_id: String,
    pub shape: Shape,
    pub values: Vec<f32>,
}

impl LayerTensor {
    pub fn new(
        layer_index: u32,
        sample_id: impl Into<String>,
        shape: Shape,
        values: Vec<f32>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if values.len() != shape.numel() {
            return Err(Error::DimensionMismatch {
                context: format!("tensor of sample {sample_id:?} at layer {layer_index}"),
                expected: shape.numel(),
                actual: values.len(),
            });
        }
        Ok(Self {
            layer_index,
            sample_id,
            shape,
            values,
        })
    }

    /// Flattened spatial map of channel `k`.
    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.shape.spatial();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.shape.spatial())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                layer_index: self.layer_index,
                sample_id: self.sample_id.clone(),
            })
        }
    }
}

/// Handle to an archive on disk with its validated manifest.
#[derive(Debug, Clone)]
pub struct Archive {
    root: PathBuf,
    manifest: Manifest,
}

impl Archive {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = read_manifest(&root)?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn layer_path(&self, index: u32) -> PathBuf {
        self.root.join(layer_file_name(index))
    }

    pub fn read_layer_tensors<F>(&self, layer_index: u32, filter: F) -> Result<Vec<LayerTensor>>
    where
        F: Fn(&SampleRecord) -> bool,
    {
        read_layer_tensors(self, layer_index, filter)
    }

    pub fn read_layer(&self, layer_index: u32) -> Result<Vec<LayerTensor>> {
        self.read_layer_tensors(layer_index, |_| true)
    }
}

/// Writes `manifest` and every tensor to `destination`.
///
/// Tensors may arrive in any order; every (layer, sample) pair must be
/// supplied exactly once. Blobs are laid out in canonical manifest order.
pub fn write_archive<I>(
    manifest: &Manifest,
    tensors: I,
    destination: impl AsRef<Path>,
) -> Result<Archive>
where
    I: IntoIterator<Item = LayerTensor>,
{
    let destination = destination.as_ref();
    manifest.validate()?;

    let n_samples = manifest.samples.len();
    let mut slots: Vec<Vec<Option<Vec<f32>>>> = manifest
        .layers
        .iter()
        .map(|_| vec![None; n_samples])
        .collect();

    for tensor in tensors {
        let layer = manifest
            .layer(tensor.layer_index)
            .ok_or(Error::UnknownLayer(tensor.layer_index))?;
        let position = manifest
            .sample_position(&tensor.sample_id)
            .ok_or_else(|| Error::UnknownSample(tensor.sample_id.clone()))?;
        let expected = layer.shape().numel();
        if tensor.values.len() != expected || tensor.shape != layer.shape() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "tensor of sample {:?} at layer {}",
                    tensor.sample_id, tensor.layer_index
                ),
                expected,
                actual: tensor.values.len(),
            });
        }
        let slot = &mut slots[tensor.layer_index as usize][position];
        if slot.is_some() {
            return Err(Error::DuplicateTensor {
                layer_index: tensor.layer_index,
                sample_id: tensor.sample_id,
            });
        }
        *slot = Some(tensor.values);
    }

    for (layer, row) in manifest.layers.iter().zip(&slots) {
        if let Some(position) = row.iter().position(Option::is_none) {
            return Err(Error::MissingTensor {
                layer_index: layer.index,
                sample_id: manifest.samples[position].id.clone(),
            });
        }
    }

    fs::create_dir_all(destination).map_err(|e| Error::io(destination, e))?;

    let manifest_path = destination.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidManifest(e.to_string()))?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    for (layer, row) in manifest.layers.iter().zip(slots) {
        let path = destination.join(layer_file_name(layer.index));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let header = BlobHeader::for_layer(layer, n_samples as u64);
        let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            header.write_to(out)?;
            for values in row.iter().flatten() {
                for v in values {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(&path, e))?;
    }

    Ok(Archive {
        root: destination.to_path_buf(),
        manifest: manifest.clone(),
    })
}

fn parse_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    // Check the version before the full schema so a future format reports
    // as unsupported rather than malformed.
    if let Some(version) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if version != FORMAT_VERSION as u64 {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version,
                supported: FORMAT_VERSION,
            });
        }
    }
    serde_json::from_value(raw).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads and fully validates the manifest of the archive at `root`,
/// including the magic and header of every layer blob.
pub fn read_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let manifest = parse_manifest(&root.join(MANIFEST_FILE))?;
    manifest.validate()?;
    for layer in &manifest.layers {
        let path = root.join(layer_file_name(layer.index));
        let header = BlobHeader::read_from_path(&path)?;
        header.check_against(layer, manifest.samples.len() as u64, &path)?;
    }
    Ok(manifest)
}

/// Reads the tensors of one layer for the samples accepted by `filter`, in
/// manifest order.
pub fn read_layer_tensors<F>(
    archive: &Archive,
    layer_index: u32,
    filter: F,
) -> Result<Vec<LayerTensor>>
where
    F: Fn(&SampleRecord) -> bool,
{
    let manifest = archive.manifest();
    let layer = manifest
        .layer(layer_index)
        .ok_or(Error::UnknownLayer(layer_index))?;
    let path = archive.layer_path(layer_index);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let header = BlobHeader::parse(&bytes, &path)?;
    let n_samples = manifest.samples.len() as u64;
    header.check_against(layer, n_samples, &path)?;

    let shape = layer.shape();
    let sample_bytes = shape.numel() * 4;
    let expected = HEADER_LEN as u64 + n_samples * sample_bytes as u64;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated {
            path,
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::HeaderMismatch {
            path,
            reason: format!("{} trailing bytes after the last sample", actual - expected),
        });
    }

    let data = &bytes[HEADER_LEN..];
    Ok(manifest
        .samples
        .iter()
        .enumerate()
        .filter(|(_, record)| filter(record))
        .map(|(position, record)| {
            let chunk = &data[position * sample_bytes..(position + 1) * sample_bytes];
            LayerTensor {
                layer_index,
                sample_id: record.id.clone(),
                shape,
                values: decode_f32s(chunk),
            }
        })
        .collect())
}

pub(crate) fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
