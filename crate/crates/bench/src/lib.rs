//! Shared fixtures for the benchmarks.

use msood_core::synth::Gaussian;
use msood_core::{LayerTensor, ScoreSet, Shape};

/// `n` standard-normal vectors of dimension `d`.
pub fn gaussian_vectors(seed: u64, n: usize, d: usize) -> Vec<Vec<f32>> {
    let mut g = Gaussian::new(seed);
    (0..n)
        .map(|_| (0..d).map(|_| g.sample() as f32).collect())
        .collect()
}

/// Rectified-looking activation tensor: non-negative Gaussian magnitudes.
pub fn activation_tensor(seed: u64, shape: Shape) -> LayerTensor {
    let mut g = Gaussian::new(seed);
    let values = (0..shape.numel())
        .map(|_| g.sample().abs() as f32)
        .collect();
    LayerTensor::new(0, "bench", shape, values).expect("shape and values agree")
}

/// Overlapping ID and OOD score populations.
pub fn score_set(seed: u64, n: usize, m: usize) -> ScoreSet {
    let mut g = Gaussian::new(seed);
    let id = (0..n).map(|_| g.sample() + 1.0).collect();
    let ood = (0..m).map(|_| g.sample()).collect();
    ScoreSet::new(id, ood)
}
