//! Dense reference solver for the one-class dual
//!
//! ```text
//! min ½ αᵀKα   s.t.  0 ≤ α ≤ C,  Σα = 1
//! ```
//!
//! Every split of the indices into zero / free / upper sets is tried; for
//! each, the stationarity equations are solved by plain Gaussian
//! elimination and the first split whose solution satisfies all KKT
//! conditions wins. Exponential, so only meant for n ≤ 12 or so.

#![allow(clippy::needless_range_loop)]

const BOX_SLACK: f64 = 1e-12;
const KKT_SLACK: f64 = 1e-10;
const SNAP: f64 = 1e-12;

pub struct QpSolution {
    pub alphas: Vec<f64>,
    pub rho: f64,
}

pub fn kernel_matrix(points: &[Vec<f32>], gamma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    let d2: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                        .sum();
                    (-gamma * d2).exp()
                })
                .collect()
        })
        .collect()
}

/// `1 / (d · mean variance)`, written out independently of the library.
pub fn auto_gamma(points: &[Vec<f32>]) -> f64 {
    let n = points.len() as f64;
    let d = points[0].len();
    let mut var = 0.0;
    for k in 0..d {
        let xs: Vec<f64> = points.iter().map(|p| p[k] as f64).collect();
        let mean = xs.iter().sum::<f64>() / n;
        var += xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    }
    let var = var / d as f64;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..m {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn gradient(k: &[Vec<f64>], alphas: &[f64]) -> Vec<f64> {
    k.iter()
        .map(|row| row.iter().zip(alphas).map(|(a, b)| a * b).sum())
        .collect()
}

/// Offset convention shared with the library: mean gradient over free
/// coefficients, otherwise the midpoint of the interval allowed by the
/// bounded ones.
pub fn offset(alphas: &[f64], grad: &[f64], upper: f64) -> f64 {
    let free: Vec<f64> = alphas
        .iter()
        .zip(grad)
        .filter(|(a, _)| **a > 0.0 && **a < upper)
        .map(|(_, g)| *g)
        .collect();
    if !free.is_empty() {
        return free.iter().sum::<f64>() / free.len() as f64;
    }
    let lo = alphas
        .iter()
        .zip(grad)
        .filter(|(a, _)| **a >= upper)
        .map(|(_, g)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = alphas
        .iter()
        .zip(grad)
        .filter(|(a, _)| **a <= 0.0)
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min);
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        _ => hi,
    }
}

/// Coefficients within `SNAP` of a bound are on it; otherwise a rounding
/// residue would decide which offset convention applies.
fn snap(a: f64, upper: f64) -> f64 {
    if a <= SNAP {
        0.0
    } else if a >= upper - SNAP {
        upper
    } else {
        a
    }
}

fn try_split(k: &[Vec<f64>], upper: f64, at_upper: u32, free: u32) -> Option<QpSolution> {
    let n = k.len();
    let ups: Vec<usize> = (0..n).filter(|&i| at_upper >> i & 1 == 1).collect();
    let frees: Vec<usize> = (0..n).filter(|&i| free >> i & 1 == 1).collect();
    let mut alphas = vec![0.0; n];
    for &u in &ups {
        alphas[u] = upper;
    }
    let rho;
    if frees.is_empty() {
        if ((ups.len() as f64) * upper - 1.0).abs() > 1e-12 {
            return None;
        }
        rho = None;
    } else {
        let m = frees.len();
        let mut a = vec![vec![0.0; m + 1]; m + 1];
        let mut b = vec![0.0; m + 1];
        for (r, &i) in frees.iter().enumerate() {
            for (c, &j) in frees.iter().enumerate() {
                a[r][c] = k[i][j];
            }
            a[r][m] = -1.0;
            a[m][r] = 1.0;
            b[r] = -upper * ups.iter().map(|&u| k[i][u]).sum::<f64>();
        }
        b[m] = 1.0 - upper * ups.len() as f64;
        let x = gauss_solve(a, b)?;
        for (r, &i) in frees.iter().enumerate() {
            if x[r] < -BOX_SLACK || x[r] > upper + BOX_SLACK {
                return None;
            }
            alphas[i] = snap(x[r], upper);
        }
        rho = Some(x[m]);
    }
    let grad = gradient(k, &alphas);
    let level = rho.unwrap_or_else(|| offset(&alphas, &grad, upper));
    for i in 0..n {
        let ok = if at_upper >> i & 1 == 1 {
            grad[i] <= level + KKT_SLACK
        } else if free >> i & 1 == 1 {
            true
        } else {
            grad[i] >= level - KKT_SLACK
        };
        if !ok {
            return None;
        }
    }
    let rho = offset(&alphas, &grad, upper);
    Some(QpSolution { alphas, rho })
}

pub fn solve(k: &[Vec<f64>], nu: f64) -> QpSolution {
    let n = k.len();
    assert!(n <= 20, "oracle is exponential in n");
    let upper = 1.0 / (nu * n as f64);
    let max_upper = ((1.0 + 1e-12) / upper).floor() as u32;
    let all = (1u32 << n) - 1;
    for at_upper in 0..=all {
        if at_upper.count_ones() > max_upper {
            continue;
        }
        let rest = all & !at_upper;
        let mut free = rest;
        loop {
            if let Some(s) = try_split(k, upper, at_upper, free) {
                return s;
            }
            if free == 0 {
                break;
            }
            free = (free - 1) & rest;
        }
    }
    panic!("no KKT point found for a convex problem");
}

pub fn decision(points: &[Vec<f32>], sol: &QpSolution, gamma: f64, x: &[f32]) -> f64 {
    points
        .iter()
        .zip(&sol.alphas)
        .map(|(p, a)| {
            let d2: f64 = p
                .iter()
                .zip(x)
                .map(|(u, v)| (*u as f64 - *v as f64).powi(2))
                .sum();
            a * (-gamma * d2).exp()
        })
        .sum::<f64>()
        - sol.rho
}
