//! ν-one-class support vector machine with an RBF kernel.
//!
//! The dual problem solved here is
//!
//! ```text
//! minimize    ½ Σ_i Σ_j α_i α_j K(x_i, x_j)
//! subject to  0 ≤ α_i ≤ 1 / (ν n),   Σ_i α_i = 1
//! ```
//!
//! and the decision function is `Σ_i α_i K(sv_i, x) − ρ`, positive on the
//! in-distribution side.

mod io;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_model, write_model, OSVM_MAGIC, OSVM_VERSION};
pub use solver::SolverReport;

/// RBF kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Gamma {
    /// `1 / (d · mean per-dimension variance)` of the training vectors.
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Auto => s.serialize_str("auto"),
            Gamma::Fixed(g) => s.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) if s == "auto" => Ok(Gamma::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "gamma must be \"auto\" or a positive number, got {s:?}"
            ))),
            Raw::Number(g) => Ok(Gamma::Fixed(g)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcsvmConfig {
    pub nu: f64,
    pub gamma: Gamma,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 · n²`.
    pub max_passes: Option<u64>,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.001,
            gamma: Gamma::Auto,
            tolerance: 1e-6,
            max_passes: None,
        }
    }
}

impl OcsvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "nu must be in (0, 1], got {}",
                self.nu
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let Gamma::Fixed(g) = self.gamma {
            check_gamma(g)?;
        }
        if self.max_passes == Some(0) {
            return Err(Error::InvalidConfig("max_passes must be positive".into()));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "gamma must be positive and finite, got {gamma}"
        )))
    }
}

fn check_len(a: usize, b: usize, context: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: a,
            actual: b,
        })
    }
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// `exp(−γ ‖a − b‖²)`.
pub fn rbf_kernel(a: &[f32], b: &[f32], gamma: f64) -> Result<f64> {
    check_len(a.len(), b.len(), "rbf kernel operands")?;
    check_gamma(gamma)?;
    Ok((-gamma * squared_distance(a, b)).exp())
}

/// Scale-free kernel width `1 / (d · v̄)` with `v̄` the mean population
/// variance across dimensions; `1.0` when the data has no spread.
pub fn default_gamma(vectors: &[Vec<f32>]) -> Result<f64> {
    let first = vectors
        .first()
        .ok_or(Error::EmptyInput("gamma heuristic needs training vectors"))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::EmptyInput("gamma heuristic needs non-empty vectors"));
    }
    for v in vectors {
        check_len(dim, v.len(), "training vector")?;
    }
    let n = vectors.len() as f64;
    let mut total_variance = 0.0;
    for k in 0..dim {
        let mean = vectors.iter().map(|v| v[k] as f64).sum::<f64>() / n;
        total_variance += vectors
            .iter()
            .map(|v| {
                let d = v[k] as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
    }
    let mean_variance = total_variance / dim as f64;
    if mean_variance > 0.0 {
        Ok(1.0 / (dim as f64 * mean_variance))
    } else {
        Ok(1.0)
    }
}

/// A trained one-class SVM. Only vectors with a non-zero coefficient are
/// kept.
#[derive(Debug, Clone, PartialEq)]
pub struct OcsvmModel {
    pub layer_index: u32,
    pub gamma: f64,
    pub rho: f64,
    pub alphas: Vec<f64>,
    pub support_vectors: Vec<Vec<f32>>,
}

impl OcsvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// Signed distance-like score; positive means in-distribution side.
    pub fn decision(&self, x: &[f32]) -> Result<f64> {
        check_len(self.dim(), x.len(), "decision input")?;
        let sum: f64 = self
            .alphas
            .iter()
            .zip(&self.support_vectors)
            .map(|(a, sv)| a * (-self.gamma * squared_distance(sv, x)).exp())
            .sum();
        Ok(sum - self.rho)
    }
}

#[derive(Debug, Clone)]
pub struct OcsvmFit {
    pub model: OcsvmModel,
    pub report: SolverReport,
}

/// Trains a one-class SVM on `vectors`.
///
/// Failure to reach the tolerance within the iteration cap is not an error:
/// the best iterate is returned and `report.converged` is false.
pub fn fit_ocsvm(vectors: &[Vec<f32>], config: &OcsvmConfig) -> Result<OcsvmFit> {
    config.validate()?;
    let first = vectors
        .first()
        .ok_or(Error::EmptyInput("one-class SVM needs training vectors"))?;
    let dim = first.len();
    for (i, v) in vectors.iter().enumerate() {
        check_len(dim, v.len(), &format!("training vector {i}"))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "training vector {i} has non-finite values"
            )));
        }
    }
    let gamma = match config.gamma {
        Gamma::Auto => default_gamma(vectors)?,
        Gamma::Fixed(g) => g,
    };
    let n = vectors.len();
    let upper = 1.0 / (config.nu * n as f64);
    let max_iter = config
        .max_passes
        .unwrap_or_else(|| 10u64.saturating_mul((n as u64).saturating_mul(n as u64)));

    let kernel = solver::KernelMatrix::new(vectors, gamma);
    let solution = solver::solve(&kernel, upper, config.tolerance, max_iter);

    let (alphas, support_vectors) = solution
        .alphas
        .iter()
        .zip(vectors)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, v)| (*a, v.clone()))
        .unzip();

    Ok(OcsvmFit {
        model: OcsvmModel {
            layer_index: 0,
            gamma,
            rho: solution.rho,
            alphas,
            support_vectors,
        },
        report: solution.report,
    })
}
