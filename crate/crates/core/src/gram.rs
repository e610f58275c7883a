//! Gram-matrix deviation detector.
//!
//! For a rectified activation reshaped to `r ∈ R^{K×(w·h)}` (entries raised
//! to the power `p`), the Gram matrix `G = r rᵀ` is summarized by its row
//! sums. Training fixes per-channel bounds on the min-max normalized row
//! sums; at test time each channel contributes a relative excursion outside
//! its bounds, and the sum is divided by the mean validation deviation.

use serde::{Deserialize, Serialize};

use crate::activation::rectify;
use crate::error::{Error, Result};
use crate::feature_io::LayerTensor;

/// Stand-in for a zero bound in the relative-excursion denominators and the
/// floor of the expected validation deviation.
pub const DEVIATION_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramStats {
    pub layer_index: u32,
    pub order: u32,
    /// Per-channel minima of the normalized row sums.
    pub lambda: Vec<f64>,
    /// Per-channel maxima of the normalized row sums.
    #[serde(rename = "Lambda")]
    pub big_lambda: Vec<f64>,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub expected_deviation: f64,
}

impl GramStats {
    pub fn channels(&self) -> usize {
        self.lambda.len()
    }

    fn normalize(&self, g: f64) -> f64 {
        (g - self.norm_lo) / (self.norm_hi - self.norm_lo)
    }

    /// Sum over channels of the relative excursion of `normalized` outside
    /// `[lambda, Lambda]`, before division by the expected deviation.
    pub fn raw_deviation(&self, normalized: &[f64]) -> f64 {
        normalized
            .iter()
            .zip(self.lambda.iter().zip(&self.big_lambda))
            .map(|(&g, (&lo, &hi))| channel_deviation(lo, hi, g))
            .sum()
    }
}

/// Relative excursion of `g` outside `[lo, hi]`; zero inside.
pub fn channel_deviation(lo: f64, hi: f64, g: f64) -> f64 {
    let denom = |b: f64| if b == 0.0 { DEVIATION_EPSILON } else { b.abs() };
    if g < lo {
        (lo - g) / denom(lo)
    } else if g > hi {
        (g - hi) / denom(hi)
    } else {
        0.0
    }
}

fn check_order(p: u32) -> Result<()> {
    if p < 1 {
        return Err(Error::InvalidConfig(format!(
            "Gram order p must be at least 1, got {p}"
        )));
    }
    Ok(())
}

/// Row sums of `G = r rᵀ`: `out[k] = Σ_{k'} ⟨r_k, r_{k'}⟩`. The tensor is
/// expected to be rectified already.
pub fn gram_row_sums(tensor: &LayerTensor, p: u32) -> Result<Vec<f64>> {
    check_order(p)?;
    let rows: Vec<Vec<f64>> = tensor
        .channels()
        .map(|ch| ch.iter().map(|v| (*v as f64).powi(p as i32)).collect())
        .collect();
    Ok(rows
        .iter()
        .map(|rk| {
            rows.iter()
                .map(|rj| rk.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        })
        .collect())
}

fn check_channels(expected: usize, tensor: &LayerTensor) -> Result<()> {
    if tensor.shape.channels != expected {
        return Err(Error::DimensionMismatch {
            context: format!(
                "channels of sample {:?} at layer {}",
                tensor.sample_id, tensor.layer_index
            ),
            expected,
            actual: tensor.shape.channels,
        });
    }
    Ok(())
}

fn rectified_row_sums(tensor: &LayerTensor, p: u32, rectify_c: f64) -> Result<Vec<f64>> {
    gram_row_sums(&rectify(tensor, rectify_c)?, p)
}

/// Fits channel bounds on `train` and the expected deviation on
/// `validation`.
pub fn fit_gram_stats(
    train: &[LayerTensor],
    validation: &[LayerTensor],
    p: u32,
    rectify_c: f64,
) -> Result<GramStats> {
    check_order(p)?;
    let first = train
        .first()
        .ok_or(Error::EmptyInput("Gram statistics need training tensors"))?;
    if validation.is_empty() {
        return Err(Error::EmptyInput("Gram statistics need validation tensors"));
    }
    let channels = first.shape.channels;
    for t in train.iter().chain(validation) {
        check_channels(channels, t)?;
    }

    let sums = train
        .iter()
        .map(|t| rectified_row_sums(t, p, rectify_c))
        .collect::<Result<Vec<_>>>()?;

    let (mut norm_lo, mut norm_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for g in sums.iter().flatten() {
        norm_lo = norm_lo.min(*g);
        norm_hi = norm_hi.max(*g);
    }
    if norm_hi <= norm_lo {
        norm_hi = norm_lo + 1.0;
    }

    let mut stats = GramStats {
        layer_index: first.layer_index,
        order: p,
        lambda: vec![f64::INFINITY; channels],
        big_lambda: vec![f64::NEG_INFINITY; channels],
        norm_lo,
        norm_hi,
        expected_deviation: 1.0,
    };
    for row in &sums {
        for (k, g) in row.iter().enumerate() {
            let g = stats.normalize(*g);
            stats.lambda[k] = stats.lambda[k].min(g);
            stats.big_lambda[k] = stats.big_lambda[k].max(g);
        }
    }

    let mut total = 0.0;
    for t in validation {
        total += raw_deviation(&stats, t, rectify_c)?;
    }
    let mean = total / validation.len() as f64;
    stats.expected_deviation = if mean < DEVIATION_EPSILON {
        DEVIATION_EPSILON
    } else {
        mean
    };
    Ok(stats)
}

/// Normalized row sums of a tensor under the training normalization.
pub fn normalized_row_sums(
    stats: &GramStats,
    tensor: &LayerTensor,
    rectify_c: f64,
) -> Result<Vec<f64>> {
    check_channels(stats.channels(), tensor)?;
    Ok(rectified_row_sums(tensor, stats.order, rectify_c)?
        .into_iter()
        .map(|g| stats.normalize(g))
        .collect())
}

fn raw_deviation(stats: &GramStats, tensor: &LayerTensor, rectify_c: f64) -> Result<f64> {
    Ok(stats.raw_deviation(&normalized_row_sums(stats, tensor, rectify_c)?))
}

/// Single-layer deviation score: larger is more out-of-distribution.
pub fn deviation(stats: &GramStats, tensor: &LayerTensor, rectify_c: f64) -> Result<f64> {
    Ok(raw_deviation(stats, tensor, rectify_c)? / stats.expected_deviation)
}

/// Sum of per-layer deviations over several Gram-monitored layers. `stats`
/// and `tensors` are paired by position.
pub fn total_deviation(
    stats: &[GramStats],
    tensors: &[LayerTensor],
    rectify_c: f64,
) -> Result<f64> {
    if stats.len() != tensors.len() {
        return Err(Error::LayerMismatch(format!(
            "{} Gram statistics for {} tensors",
            stats.len(),
            tensors.len()
        )));
    }
    stats
        .iter()
        .zip(tensors)
        .map(|(s, t)| {
            if s.layer_index != t.layer_index {
                return Err(Error::LayerMismatch(format!(
                    "statistics for layer {} paired with tensor of layer {}",
                    s.layer_index, t.layer_index
                )));
            }
            deviation(s, t, rectify_c)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::Shape;
    use proptest::prelude::*;

    fn tensor(shape: Shape, values: Vec<f32>) -> LayerTensor {
        LayerTensor::new(3, "s", shape, values).unwrap()
    }

    fn stats_1ch(lo: f64, hi: f64) -> GramStats {
        GramStats {
            layer_index: 3,
            order: 1,
            lambda: vec![lo],
            big_lambda: vec![hi],
            norm_lo: 0.0,
            norm_hi: 1.0,
            expected_deviation: 1.0,
        }
    }

    #[test]
    fn row_sum_hand_cases() {
        let t = tensor(Shape::new(2, 1, 1), vec![1.0, 2.0]);
        assert_eq!(gram_row_sums(&t, 1).unwrap(), vec![3.0, 6.0]);
        let t = tensor(Shape::new(3, 2, 2), vec![0.0; 12]);
        assert_eq!(gram_row_sums(&t, 1).unwrap(), vec![0.0; 3]);
        let t = tensor(Shape::new(1, 3, 1), vec![1.0, -2.0, 0.5]);
        assert_eq!(gram_row_sums(&t, 1).unwrap(), vec![5.25]);
        assert!(gram_row_sums(&t, 0).is_err());
    }

    #[test]
    fn deviation_hand_cases() {
        // row sum 4 scaled by (0, 5) gives ĝ = 0.8, above Λ = 0.5
        let mut s = stats_1ch(0.2, 0.5);
        s.norm_hi = 5.0;
        let above = tensor(Shape::new(1, 1, 1), vec![2.0]);
        assert!((deviation(&s, &above, 10.0).unwrap() - 0.6).abs() <= 1e-12);
        // row sum 1 scaled by (0, 10) gives ĝ = 0.1, below λ = 0.2
        s.norm_hi = 10.0;
        let below = tensor(Shape::new(1, 1, 1), vec![1.0]);
        assert!((deviation(&s, &below, 10.0).unwrap() - 0.5).abs() <= 1e-12);
        assert!((channel_deviation(0.2, 0.5, 0.8) - 0.6).abs() <= 1e-12);
        assert!((channel_deviation(0.2, 0.5, 0.1) - 0.5).abs() <= 1e-12);
        assert_eq!(channel_deviation(0.2, 0.5, 0.35), 0.0);
        assert_eq!(channel_deviation(0.0, 0.5, -1e-12), 1.0);
    }

    #[test]
    fn three_sample_normalization() {
        // K = 1, w = h = 1: row sum is the squared value -> {1, 2, 4}
        let train: Vec<LayerTensor> = [1.0f32, 2.0, 4.0]
            .iter()
            .map(|g| tensor(Shape::new(1, 1, 1), vec![g.sqrt()]))
            .collect();
        let s = fit_gram_stats(&train, &train[..1], 1, 10.0).unwrap();
        assert!((s.norm_lo - 1.0).abs() < 1e-6);
        assert!((s.norm_hi - 4.0).abs() < 1e-6);
        assert_eq!(s.lambda, vec![0.0]);
        assert_eq!(s.big_lambda, vec![1.0]);
    }

    #[test]
    fn single_sample_and_floor() {
        let t = tensor(Shape::new(2, 1, 2), vec![0.5, 1.0, 0.25, 0.75]);
        let s = fit_gram_stats(std::slice::from_ref(&t), std::slice::from_ref(&t), 1, 1.0).unwrap();
        assert_eq!(s.lambda, s.big_lambda);
        assert_eq!(deviation(&s, &t, 1.0).unwrap(), 0.0);
        assert_eq!(s.expected_deviation, DEVIATION_EPSILON);
    }

    #[test]
    fn errors() {
        let t1 = tensor(Shape::new(1, 1, 1), vec![1.0]);
        let t2 = tensor(Shape::new(2, 1, 1), vec![1.0, 2.0]);
        assert!(matches!(
            fit_gram_stats(&[], std::slice::from_ref(&t1), 1, 1.0),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            fit_gram_stats(std::slice::from_ref(&t1), std::slice::from_ref(&t2), 1, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        let s =
            fit_gram_stats(std::slice::from_ref(&t1), std::slice::from_ref(&t1), 1, 1.0).unwrap();
        assert!(deviation(&s, &t2, 1.0).is_err());
    }

    fn arb_set() -> impl Strategy<Value = (Shape, Vec<Vec<f32>>)> {
        (1usize..5, 1usize..4, 1usize..4, 1usize..8).prop_flat_map(|(k, w, h, n)| {
            let shape = Shape::new(k, w, h);
            (
                Just(shape),
                prop::collection::vec(prop::collection::vec(-1.0f32..3.0, k * w * h), n),
            )
        })
    }

    proptest! {
        #[test]
        fn training_samples_never_deviate((shape, data) in arb_set(), c in 0.2f64..2.0) {
            let ts: Vec<LayerTensor> = data.into_iter().map(|v| tensor(shape, v)).collect();
            let s = fit_gram_stats(&ts, &ts, 1, c).unwrap();
            for t in &ts {
                prop_assert_eq!(deviation(&s, t, c).unwrap(), 0.0);
            }
            for (lo, hi) in s.lambda.iter().zip(&s.big_lambda) {
                prop_assert!(lo <= hi);
            }
            prop_assert!(s.expected_deviation >= DEVIATION_EPSILON);
        }

        #[test]
        fn deviation_is_nonnegative_and_monotone(lo in 0.0f64..1.0, width in 0.0f64..1.0, a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let hi = lo + width;
            let (x, y) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(channel_deviation(lo, hi, x) >= 0.0);
            if x > hi && y > x {
                prop_assert!(channel_deviation(lo, hi, y) > channel_deviation(lo, hi, x));
            }
        }

        #[test]
        fn row_sums_ignore_shared_spatial_permutation((shape, data) in arb_set(), seed: u64) {
            let n = shape.spatial();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut state = seed;
            for i in (1..n).rev() {
                let (v, next) = crate::synth::prng_next(state);
                state = next;
                perm.swap(i, (v % (i as u64 + 1)) as usize);
            }
            let t = tensor(shape, data[0].clone());
            let mut permuted = t.clone();
            for k in 0..shape.channels {
                for (dst, &src) in perm.iter().enumerate() {
                    permuted.values[k * n + dst] = t.values[k * n + src];
                }
            }
            let a = gram_row_sums(&t, 1).unwrap();
            let b = gram_row_sums(&permuted, 1).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
