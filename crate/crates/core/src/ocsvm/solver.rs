//! Sequential minimal optimization for the one-class dual, followed by an
//! exact solve on the active set the iterations settle on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::squared_distance;

const DEGENERATE_CURVATURE: f64 = 1e-12;
const SINGULAR_CUTOFF: f64 = 1e-12;
const BOUND_SNAP: f64 = 1e-12;
/// A bounded coefficient is released when it violates KKT by more than this.
const RELEASE_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub n_train: usize,
    pub upper_bound: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Maximal KKT violation of the returned coefficients.
    pub kkt_gap: f64,
    /// Whether the active-set refinement replaced the SMO iterate.
    pub polished: bool,
}

pub(super) struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub(super) fn new(vectors: &[Vec<f32>], gamma: f64) -> Self {
        let n = vectors.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in 0..i {
                let k = (-gamma * squared_distance(&vectors[i], &vectors[j])).exp();
                values[i * n + j] = k;
                values[j * n + i] = k;
            }
        }
        Self { n, values }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn gradient(&self, alphas: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(alphas).map(|(k, a)| k * a).sum())
            .collect()
    }
}

pub(super) struct Solution {
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub report: SolverReport,
}

/// Most violating pair: `up` can grow (α < C) with the smallest gradient,
/// `down` can shrink (α > 0) with the largest. Ties go to the lowest index.
fn violating_pair(alphas: &[f64], grad: &[f64], upper: f64) -> Option<(usize, usize, f64)> {
    let mut up: Option<usize> = None;
    let mut down: Option<usize> = None;
    for t in 0..alphas.len() {
        if alphas[t] < upper && up.is_none_or(|u| grad[t] < grad[u]) {
            up = Some(t);
        }
        if alphas[t] > 0.0 && down.is_none_or(|d| grad[t] > grad[d]) {
            down = Some(t);
        }
    }
    let (up, down) = (up?, down?);
    Some((up, down, grad[down] - grad[up]))
}

fn kkt_gap(alphas: &[f64], grad: &[f64], upper: f64) -> f64 {
    violating_pair(alphas, grad, upper).map_or(0.0, |(_, _, gap)| gap.max(0.0))
}

pub(super) fn solve(kernel: &KernelMatrix, upper: f64, tolerance: f64, max_iter: u64) -> Solution {
    let n = kernel.n;
    // Uniform start is feasible because 1/n ≤ 1/(νn) whenever ν ≤ 1.
    let mut alphas = vec![1.0 / n as f64; n];
    let mut grad = kernel.gradient(&alphas);

    let mut iterations = 0u64;
    let mut converged = false;
    while iterations < max_iter {
        let Some((i, j, gap)) = violating_pair(&alphas, &grad, upper) else {
            converged = true;
            break;
        };
        if gap < tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let curvature =
            (kernel.at(i, i) + kernel.at(j, j) - 2.0 * kernel.at(i, j)).max(DEGENERATE_CURVATURE);
        let room_i = upper - alphas[i];
        let room_j = alphas[j];
        let mut step = gap / curvature;
        if step >= room_i {
            step = room_i;
        }
        if step >= room_j {
            step = room_j;
        }
        // Snap to the bound that limited the step so bound membership is exact.
        if step == room_i {
            alphas[i] = upper;
        } else {
            alphas[i] += step;
        }
        if step == room_j {
            alphas[j] = 0.0;
        } else {
            alphas[j] -= step;
        }

        let (row_i, row_j) = (kernel.row(i), kernel.row(j));
        for ((g, ki), kj) in grad.iter_mut().zip(row_i).zip(row_j) {
            *g += step * (ki - kj);
        }
    }

    let mut polished = false;
    if let Some(refined) = refine_on_active_set(kernel, &alphas, upper, tolerance) {
        alphas = refined;
        grad = kernel.gradient(&alphas);
        polished = true;
    }

    let rho = offset(&alphas, &grad, upper);
    let report = SolverReport {
        n_train: n,
        upper_bound: upper,
        iterations,
        converged,
        kkt_gap: kkt_gap(&alphas, &grad, upper),
        polished,
    };
    Solution {
        alphas,
        rho,
        report,
    }
}

/// Offset so that free support vectors sit on the decision surface; when no
/// coefficient is strictly inside the box, the midpoint of the feasible
/// interval implied by the bounded ones.
pub(crate) fn offset(alphas: &[f64], grad: &[f64], upper: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut lower_bound = f64::NEG_INFINITY;
    let mut upper_bound = f64::INFINITY;
    for (a, g) in alphas.iter().zip(grad) {
        if *a >= upper {
            lower_bound = lower_bound.max(*g);
        } else if *a <= 0.0 {
            upper_bound = upper_bound.min(*g);
        } else {
            free_sum += g;
            free_count += 1;
        }
    }
    if free_count > 0 {
        free_sum / free_count as f64
    } else if lower_bound.is_finite() && upper_bound.is_finite() {
        0.5 * (lower_bound + upper_bound)
    } else if lower_bound.is_finite() {
        lower_bound
    } else {
        upper_bound
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Zero,
    Free,
    Upper,
}

/// Coefficients within `BOUND_SNAP` of a bound are put on it, so rounding
/// residue cannot decide whether a coefficient counts as free for the offset.
fn snap_to_bounds(a: f64, upper: f64) -> f64 {
    if a <= BOUND_SNAP {
        0.0
    } else if a >= upper - BOUND_SNAP {
        upper
    } else {
        a
    }
}

/// LU first; duplicate training points make the system singular, in which
/// case the minimum-norm least-squares solution spreads weight evenly over
/// the copies and is still an exact KKT point.
fn solve_kkt_system(system: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let finite = |x: &DVector<f64>| x.iter().all(|v| v.is_finite());
    if let Some(x) = system.clone().lu().solve(rhs).filter(finite) {
        return Some(x);
    }
    let svd = system.svd(true, true);
    let cutoff = SINGULAR_CUTOFF * svd.singular_values.max();
    svd.solve(rhs, cutoff).ok().filter(finite)
}

/// Minimizer of the dual restricted to the free coefficients, the others
/// held at their bounds:
///
/// ```text
/// [ K_FF  -1 ] [ α_F ]   [ -C K_FU 1 ]
/// [ 1ᵀ     0 ] [  ρ  ] = [ 1 - C |U| ]
/// ```
fn subspace_optimum(
    kernel: &KernelMatrix,
    slots: &[Slot],
    upper: f64,
) -> Option<(Vec<usize>, DVector<f64>)> {
    let n = kernel.n;
    let free: Vec<usize> = (0..n).filter(|&t| slots[t] == Slot::Free).collect();
    let at_upper: Vec<usize> = (0..n).filter(|&t| slots[t] == Slot::Upper).collect();
    let m = free.len();
    if m == 0 {
        // nothing to optimize; the offset is fixed by the bounded coefficients
        return Some((free, DVector::zeros(1)));
    }
    let mut system = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            system[(r, c)] = kernel.at(i, j);
        }
        system[(r, m)] = -1.0;
        system[(m, r)] = 1.0;
        rhs[r] = -upper * at_upper.iter().map(|&u| kernel.at(i, u)).sum::<f64>();
    }
    rhs[m] = 1.0 - upper * at_upper.len() as f64;
    solve_kkt_system(system, &rhs).map(|x| (free, x))
}

/// Primal active-set method started from the (feasible) SMO iterate: move
/// towards the optimum of the current face, stopping at the first bound
/// hit; at a face optimum, release the bounded coefficient that violates
/// the KKT conditions most. Returns `None` if no KKT point within
/// `tolerance` is reached (then the SMO iterate is kept).
fn refine_on_active_set(
    kernel: &KernelMatrix,
    start: &[f64],
    upper: f64,
    tolerance: f64,
) -> Option<Vec<f64>> {
    let n = kernel.n;
    let mut alphas = start.to_vec();
    let mut slots: Vec<Slot> = alphas
        .iter()
        .map(|&a| {
            if a <= 0.0 {
                Slot::Zero
            } else if a >= upper {
                Slot::Upper
            } else {
                Slot::Free
            }
        })
        .collect();

    for _ in 0..10 * n + 50 {
        let (free, solution) = subspace_optimum(kernel, &slots, upper)?;
        let m = free.len();

        // ratio test along the segment to the face optimum
        let mut step = 1.0;
        let mut blocking: Option<(usize, Slot)> = None;
        for (r, &i) in free.iter().enumerate() {
            let d = solution[r] - alphas[i];
            let limit = if d < 0.0 && solution[r] < 0.0 {
                Some((alphas[i] / -d, Slot::Zero))
            } else if d > 0.0 && solution[r] > upper {
                Some(((upper - alphas[i]) / d, Slot::Upper))
            } else {
                None
            };
            if let Some((t, slot)) = limit {
                if t < step {
                    step = t;
                    blocking = Some((i, slot));
                }
            }
        }
        for (r, &i) in free.iter().enumerate() {
            alphas[i] += step * (solution[r] - alphas[i]);
        }
        if let Some((i, slot)) = blocking {
            alphas[i] = if slot == Slot::Zero { 0.0 } else { upper };
            slots[i] = slot;
            continue;
        }
        for (r, &i) in free.iter().enumerate() {
            alphas[i] = snap_to_bounds(solution[r], upper);
        }

        let grad = kernel.gradient(&alphas);
        let rho = if m > 0 {
            solution[m]
        } else {
            offset(&alphas, &grad, upper)
        };
        let worst = (0..n)
            .filter_map(|t| {
                let violation = match slots[t] {
                    Slot::Zero => rho - grad[t],
                    Slot::Upper => grad[t] - rho,
                    Slot::Free => return None,
                };
                (violation > RELEASE_SLACK).then_some((t, violation))
            })
            .fold(None, |best: Option<(usize, f64)>, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        match worst {
            Some((t, _)) => slots[t] = Slot::Free,
            None => {
                let sum: f64 = alphas.iter().sum();
                let gap = kkt_gap(&alphas, &grad, upper);
                return ((sum - 1.0).abs() <= 1e-10 && gap <= tolerance).then_some(alphas);
            }
        }
    }
    None
}
