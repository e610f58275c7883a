//! Threshold-free and fixed-TPR detection metrics.
//!
//! Scores are oriented so that larger means more in-distribution. A sample
//! is accepted as ID at threshold `t` when `score ≥ t`.

use crate::error::{Error, Result};
use crate::pipeline::Orientation;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Self {
        Self {
            id_scores,
            ood_scores,
        }
    }

    fn check(&self) -> Result<()> {
        if self.id_scores.is_empty() {
            return Err(Error::EmptyInput("no ID scores"));
        }
        if self.ood_scores.is_empty() {
            return Err(Error::EmptyInput("no OOD scores"));
        }
        if self
            .id_scores
            .iter()
            .chain(&self.ood_scores)
            .any(|s| !s.is_finite())
        {
            return Err(Error::InvalidConfig("scores must be finite".into()));
        }
        Ok(())
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Area under the ROC curve via the Mann-Whitney rank sum, ties counted ½.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    s.check()?;
    let n = s.id_scores.len();
    let m = s.ood_scores.len();
    let mut pooled: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood_scores.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Midranks are half-integers, so the sum is exact.
    let mut id_rank_sum = 0.0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start;
        while end + 1 < pooled.len() && pooled[end + 1].0 == pooled[start].0 {
            end += 1;
        }
        let midrank = (start + end + 2) as f64 / 2.0;
        let ids = pooled[start..=end].iter().filter(|p| p.1).count();
        id_rank_sum += midrank * ids as f64;
        start = end + 1;
    }
    let u = id_rank_sum - (n * (n + 1)) as f64 / 2.0;
    Ok(u / (n as f64 * m as f64))
}

/// Balanced accuracy `½·TPR + ½·TNR` for given acceptance counts.
fn balanced_accuracy(id_accepted: usize, n: usize, ood_rejected: usize, m: usize) -> f64 {
    0.5 * (id_accepted as f64 / n as f64) + 0.5 * (ood_rejected as f64 / m as f64)
}

/// Maximum balanced accuracy over all thresholds.
pub fn detection_accuracy(s: &ScoreSet) -> Result<f64> {
    s.check()?;
    let ids = sorted(&s.id_scores);
    let oods = sorted(&s.ood_scores);
    let (n, m) = (ids.len(), oods.len());

    // Threshold above every score: nothing accepted.
    let mut best = balanced_accuracy(0, n, m, m);
    let mut candidates: Vec<f64> = ids.iter().chain(&oods).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let (mut id_below, mut ood_below) = (0usize, 0usize);
    for t in candidates {
        while id_below < n && ids[id_below] < t {
            id_below += 1;
        }
        while ood_below < m && oods[ood_below] < t {
            ood_below += 1;
        }
        best = best.max(balanced_accuracy(n - id_below, n, ood_below, m));
    }
    Ok(best)
}

/// Largest threshold accepting at least `tpr_target` of the ID scores.
fn threshold_at_tpr(ids_sorted: &[f64], tpr_target: f64) -> f64 {
    let n = ids_sorted.len();
    let needed = required_count(n, tpr_target);
    ids_sorted[n - needed]
}

/// Smallest count `c` with `c / n ≥ target`.
pub(crate) fn required_count(n: usize, target: f64) -> usize {
    let exact = target * n as f64;
    let mut c = exact.ceil() as usize;
    // Guard against representation error pushing an exact product up.
    if c > 0 && ((c - 1) as f64) >= exact - 1e-9 {
        c -= 1;
    }
    c.clamp(1, n)
}

/// True negative rate at the largest threshold that keeps the true positive
/// rate at or above `tpr_target`.
pub fn tnr_at_tpr(s: &ScoreSet, tpr_target: f64) -> Result<f64> {
    s.check()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "TPR target must be in (0, 1], got {tpr_target}"
        )));
    }
    let ids = sorted(&s.id_scores);
    let t = threshold_at_tpr(&ids, tpr_target);
    let rejected = s.ood_scores.iter().filter(|&&v| v < t).count();
    Ok(rejected as f64 / s.ood_scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub auroc: f64,
    pub detection_accuracy: f64,
    pub tnr_at_tpr: f64,
    pub tpr_target: f64,
}

pub fn evaluate(s: &ScoreSet, tpr_target: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        auroc: auroc(s)?,
        detection_accuracy: detection_accuracy(s)?,
        tnr_at_tpr: tnr_at_tpr(s, tpr_target)?,
        tpr_target,
    })
}

/// [`evaluate`] for raw detector scores, negating them first when larger
/// means more out-of-distribution.
pub fn evaluate_oriented(
    s: &ScoreSet,
    orientation: Orientation,
    tpr_target: f64,
) -> Result<MetricReport> {
    match orientation {
        Orientation::HigherIsId => evaluate(s, tpr_target),
        Orientation::HigherIsOod => {
            let flipped = ScoreSet::new(
                s.id_scores.iter().map(|v| -v).collect(),
                s.ood_scores.iter().map(|v| -v).collect(),
            );
            evaluate(&flipped, tpr_target)
        }
    }
}
