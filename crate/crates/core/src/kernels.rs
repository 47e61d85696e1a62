//! Kernel functions, Gram matrices and bandwidth selection.
//!
//! Samples are stored as `n × p` matrices whose rows are observations. Two
//! kernels are supported: the Gaussian kernel `exp(-γ‖u − v‖²)` for
//! continuous data and the Kronecker delta for integer-coded labels.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Row count above which Gram matrices are filled in parallel.
const PARALLEL_GRAM_ROWS: usize = 256;

/// A positive semi-definite kernel on rows of a sample matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-gamma * ‖u − v‖²)`; `gamma` has units of inverse squared distance.
    Gaussian { gamma: f64 },
    /// 1 when the two rows are equal, 0 otherwise. Rows must hold integer codes.
    Delta,
}

impl KernelSpec {
    /// Gaussian kernel, rejecting non-positive or non-finite `gamma`.
    pub fn gaussian(gamma: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { gamma } if !(gamma.is_finite() && gamma > 0.0) => Err(
                Error::InvalidKernel(format!("Gaussian gamma must be positive, got {gamma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Checks that `samples` are admissible inputs for this kernel.
    pub fn check_samples(&self, samples: &DMatrix<f64>) -> Result<()> {
        ensure_finite(samples.iter(), || "kernel input".to_string())?;
        if matches!(self, KernelSpec::Delta) && samples.iter().any(|v| v.fract() != 0.0) {
            return Err(Error::InvalidKernel(
                "delta kernel requires integer-valued label codes".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn eval_unchecked<'a>(
        &self,
        u: impl Iterator<Item = &'a f64>,
        v: impl Iterator<Item = &'a f64>,
    ) -> f64 {
        match *self {
            KernelSpec::Gaussian { gamma } => {
                let d2: f64 = u.zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Delta => {
                if u.zip(v).all(|(a, b)| a == b) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Evaluates `spec` on a single pair of vectors.
pub fn kernel_eval(spec: KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    spec.validate()?;
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel_eval",
            expected: u.len(),
            found: v.len(),
        });
    }
    ensure_finite(u.iter().chain(v), || "kernel_eval input".to_string())?;
    if matches!(spec, KernelSpec::Delta) && u.iter().chain(v).any(|x| x.fract() != 0.0) {
        return Err(Error::InvalidKernel(
            "delta kernel requires integer-valued label codes".into(),
        ));
    }
    Ok(spec.eval_unchecked(u.iter(), v.iter()))
}

/// A symmetric `n × n` matrix of kernel evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Per-row sums `Σ_j K_ij`.
    pub fn row_sums(&self) -> Vec<f64> {
        // Column sums equal row sums for a symmetric matrix and walk memory
        // contiguously in nalgebra's column-major layout.
        self.values.column_iter().map(|c| c.sum()).collect()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }
}

/// Builds the Gram matrix of `spec` over the rows of `samples`.
///
/// Only the upper triangle is evaluated; the lower triangle is mirrored, so
/// the result is exactly symmetric.
pub fn gram_matrix(spec: KernelSpec, samples: &DMatrix<f64>) -> Result<GramMatrix> {
    spec.validate()?;
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::TooFewSamples {
            context: "gram_matrix",
            needed: 1,
            got: 0,
        });
    }
    spec.check_samples(samples)?;

    let rows: Vec<Vec<f64>> = (0..n).map(|i| samples.row(i).iter().copied().collect()).collect();
    // Column-major fill of the full matrix. Each entry is evaluated from the
    // same pair of rows in the same order, so the result is exactly symmetric.
    let fill_column = |j: usize, col: &mut [f64]| {
        for (i, out) in col.iter_mut().enumerate() {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            *out = spec.eval_unchecked(rows[a].iter(), rows[b].iter());
        }
    };
    let mut values = DMatrix::zeros(n, n);
    if n >= PARALLEL_GRAM_ROWS {
        values
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, col)| fill_column(j, col));
    } else {
        for (j, col) in values.as_mut_slice().chunks_mut(n).enumerate() {
            fill_column(j, col);
        }
    }
    Ok(GramMatrix { values })
}

/// Squared Euclidean distances over all unordered pairs `i < j`.
pub(crate) fn pairwise_sq_distances(samples: &DMatrix<f64>) -> Vec<f64> {
    let n = samples.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| samples.row(i).iter().copied().collect()).collect();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(
                rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
            );
        }
    }
    out
}

/// Median of a non-empty slice; even lengths average the two central order
/// statistics. The slice is reordered.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let len = values.len();
    debug_assert!(len > 0);
    let mid = len / 2;
    let (lower, upper_mid, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    if len % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_mid + upper_mid)
    }
}

/// Median-heuristic bandwidth: `gamma = 1 / median‖x_i − x_j‖²` over
/// distinct-index pairs.
pub fn median_heuristic(samples: &DMatrix<f64>) -> Result<f64> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples {
            context: "median_heuristic",
            needed: 2,
            got: n,
        });
    }
    ensure_finite(samples.iter(), || "median_heuristic input".to_string())?;
    let mut d2 = pairwise_sq_distances(samples);
    let m = median_in_place(&mut d2);
    if m <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(1.0 / m)
}

/// Gaussian kernel with median-heuristic bandwidth for `samples`.
pub fn median_gaussian(samples: &DMatrix<f64>) -> Result<KernelSpec> {
    KernelSpec::gaussian(median_heuristic(samples)?)
}
