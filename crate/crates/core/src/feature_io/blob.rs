use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{LayerDescriptor, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const LAYER_MAGIC: [u8; 4] = *b"FARC";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub version: u32,
    pub layer_index: u32,
    pub num_samples: u64,
    pub channels: u32,
    pub width: u32,
    pub height: u32,
}

impl BlobHeader {
    pub fn for_layer(layer: &LayerDescriptor, num_samples: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            layer_index: layer.index,
            num_samples,
            channels: layer.channels,
            width: layer.width,
            height: layer.height,
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(&LAYER_MAGIC);
        buf[4..8].copy_from_slice(&self.version.to_le_bytes());
        buf[8..12].copy_from_slice(&self.layer_index.to_le_bytes());
        buf[12..20].copy_from_slice(&self.num_samples.to_le_bytes());
        buf[20..24].copy_from_slice(&self.channels.to_le_bytes());
        buf[24..28].copy_from_slice(&self.width.to_le_bytes());
        buf[28..32].copy_from_slice(&self.height.to_le_bytes());
        buf
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&self.to_bytes())
    }

    /// Decodes a header from the first bytes of a blob, checking magic and
    /// version.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || bytes[0..4] != LAYER_MAGIC {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: LAYER_MAGIC,
                found,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version as u64,
                supported: FORMAT_VERSION,
            });
        }
        Ok(Self {
            version,
            layer_index: u32_at(8),
            num_samples: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            channels: u32_at(20),
            width: u32_at(24),
            height: u32_at(28),
        })
    }

    pub fn read_from_path(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(HEADER_LEN);
        Read::by_ref(&mut file)
            .take(HEADER_LEN as u64)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        Self::parse(&buf, path)
    }

    pub fn check_against(
        &self,
        layer: &LayerDescriptor,
        num_samples: u64,
        path: &Path,
    ) -> Result<()> {
        let expected = Self::for_layer(layer, num_samples);
        if *self != expected {
            return Err(Error::HeaderMismatch {
                path: path.to_path_buf(),
                reason: format!("header {self:?} but manifest implies {expected:?}"),
            });
        }
        Ok(())
    }
}
