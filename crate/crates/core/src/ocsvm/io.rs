//! `svm_layer_<idx>.bin` encoding (little-endian):
//! magic `OSVM`, version u32, layer u32, n_sv u64, dim u32, gamma f64,
//! rho f64, alphas f64[n_sv], support vectors f32[n_sv × dim].

use std::io::{Read, Write};

use super::OcsvmModel;
use crate::error::Error;

pub const OSVM_MAGIC: [u8; 4] = *b"OSVM";
pub const OSVM_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &OcsvmModel, out: &mut W) -> std::io::Result<()> {
    out.write_all(&OSVM_MAGIC)?;
    out.write_all(&OSVM_VERSION.to_le_bytes())?;
    out.write_all(&model.layer_index.to_le_bytes())?;
    out.write_all(&(model.alphas.len() as u64).to_le_bytes())?;
    out.write_all(&(model.dim() as u32).to_le_bytes())?;
    out.write_all(&model.gamma.to_le_bytes())?;
    out.write_all(&model.rho.to_le_bytes())?;
    for a in &model.alphas {
        out.write_all(&a.to_le_bytes())?;
    }
    for sv in &model.support_vectors {
        for v in sv {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(input: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

/// Decodes a model. `path` is only used for error messages.
pub fn read_model<R: Read>(input: &mut R, path: &std::path::Path) -> Result<OcsvmModel, Error> {
    let io = |e| Error::io(path, e);
    let magic = take::<4, _>(input).map_err(io)?;
    if magic != OSVM_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: OSVM_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(take(input).map_err(io)?);
    if version != OSVM_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version as u64,
            supported: OSVM_VERSION,
        });
    }
    let layer_index = u32::from_le_bytes(take(input).map_err(io)?);
    let n_sv = u64::from_le_bytes(take(input).map_err(io)?) as usize;
    let dim = u32::from_le_bytes(take(input).map_err(io)?) as usize;
    let gamma = f64::from_le_bytes(take(input).map_err(io)?);
    let rho = f64::from_le_bytes(take(input).map_err(io)?);
    let alphas = (0..n_sv)
        .map(|_| take(input).map(f64::from_le_bytes))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    let support_vectors = (0..n_sv)
        .map(|_| {
            (0..dim)
                .map(|_| take(input).map(f32::from_le_bytes))
                .collect::<std::io::Result<Vec<_>>>()
        })
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    Ok(OcsvmModel {
        layer_index,
        gamma,
        rho,
        alphas,
        support_vectors,
    })
}
