//! Rectified activation clipping and spatial feature reduction.

use crate::error::{Error, Result};
use crate::feature_io::LayerTensor;

/// Per-channel summary of a layer tensor: mean absolute activation over the
/// spatial extent of each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub layer_index: u32,
    pub sample_id: String,
    pub values: Vec<f32>,
}

fn clip_threshold(c: f64) -> Result<f32> {
    let c32 = c as f32;
    if !c.is_finite() || !c32.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "rectification threshold must be finite, got {c}"
        )));
    }
    Ok(c32)
}

/// Upper-clips every activation at `c`. Negative values pass through.
pub fn rectify(tensor: &LayerTensor, c: f64) -> Result<LayerTensor> {
    let mut out = tensor.clone();
    rectify_in_place(&mut out.values, c)?;
    Ok(out)
}

pub fn rectify_in_place(values: &mut [f32], c: f64) -> Result<()> {
    let c = clip_threshold(c)?;
    for v in values.iter_mut() {
        *v = v.min(c);
    }
    Ok(())
}

/// Mean of absolute values over `width × height` for each channel.
pub fn reduce_spatial(tensor: &LayerTensor) -> ChannelVector {
    let area = tensor.shape.spatial() as f64;
    let values = tensor
        .channels()
        .map(|channel| {
            let sum: f64 = channel.iter().map(|v| (*v as f64).abs()).sum();
            (sum / area) as f32
        })
        .collect();
    ChannelVector {
        layer_index: tensor.layer_index,
        sample_id: tensor.sample_id.clone(),
        values,
    }
}

/// Rectify at `c`, then reduce: the feature path feeding the one-class SVM.
pub fn svm_features(tensor: &LayerTensor, c: f64) -> Result<ChannelVector> {
    Ok(reduce_spatial(&rectify(tensor, c)?))
}
