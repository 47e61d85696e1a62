use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Covariance parametrisation of a [`GaussianDistribution`].
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

/// A multivariate normal distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDistribution {
    mean: DVector<f64>,
    covariance: Covariance,
}

impl GaussianDistribution {
    pub fn full(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if covariance.nrows() != k || covariance.ncols() != k {
            return Err(Error::DimensionMismatch {
                context: "gaussian covariance",
                expected: k,
                found: covariance.nrows(),
            });
        }
        ensure_finite(mean.iter().chain(covariance.iter()), || "gaussian parameters".into())?;
        if covariance != covariance.transpose() {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        Ok(Self {
            mean,
            covariance: Covariance::Full(covariance),
        })
    }

    pub fn diagonal(mean: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        if variances.len() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "gaussian variances",
                expected: mean.len(),
                found: variances.len(),
            });
        }
        ensure_finite(mean.iter().chain(variances.iter()), || "gaussian parameters".into())?;
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite("non-positive variance".into()));
        }
        Ok(Self {
            mean,
            covariance: Covariance::Diagonal(variances),
        })
    }

    /// `Normal(0, I_dim)`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            covariance: Covariance::Diagonal(DVector::from_element(dim, 1.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Full(m) => m.clone(),
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.covariance, Covariance::Diagonal(_))
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.covariance_matrix())
            .ok_or_else(|| Error::NotPositiveDefinite("gaussian covariance".into()))
    }

    /// Marginal over the coordinates in `range`.
    pub fn marginal(&self, range: Range<usize>) -> GaussianDistribution {
        let len = range.len();
        let mean = self.mean.rows(range.start, len).into_owned();
        let covariance = match &self.covariance {
            Covariance::Full(m) => {
                Covariance::Full(m.view((range.start, range.start), (len, len)).into_owned())
            }
            Covariance::Diagonal(v) => Covariance::Diagonal(v.rows(range.start, len).into_owned()),
        };
        GaussianDistribution { mean, covariance }
    }

    /// Joint law of two independent vectors, `first` occupying the leading
    /// coordinates.
    pub fn independent_joint(first: &Self, second: &Self) -> Self {
        let (a, b) = (first.dim(), second.dim());
        let mean = DVector::from_iterator(a + b, first.mean.iter().chain(second.mean.iter()).copied());
        let covariance = match (&first.covariance, &second.covariance) {
            (Covariance::Diagonal(x), Covariance::Diagonal(y)) => Covariance::Diagonal(
                DVector::from_iterator(a + b, x.iter().chain(y.iter()).copied()),
            ),
            _ => {
                let mut m = DMatrix::zeros(a + b, a + b);
                m.view_mut((0, 0), (a, a)).copy_from(&first.covariance_matrix());
                m.view_mut((a, a), (b, b)).copy_from(&second.covariance_matrix());
                Covariance::Full(m)
            }
        };
        GaussianDistribution { mean, covariance }
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "gaussian log density",
                expected: self.dim(),
                found: x.len(),
            });
        }
        let k = self.dim() as f64;
        let diff = x - &self.mean;
        match &self.covariance {
            Covariance::Diagonal(v) => {
                let quad: f64 = diff.iter().zip(v.iter()).map(|(d, s)| d * d / s).sum();
                let logdet: f64 = v.iter().map(|s| s.ln()).sum();
                Ok(-0.5 * (k * LN_2PI + logdet + quad))
            }
            Covariance::Full(_) => {
                let chol = self.cholesky()?;
                Ok(log_density_with(&chol, &diff))
            }
        }
    }

    /// One draw using the Cholesky factor (or standard deviations).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let eps = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(match &self.covariance {
            Covariance::Diagonal(v) => &self.mean + v.map(f64::sqrt).component_mul(&eps),
            Covariance::Full(_) => &self.mean + self.cholesky()?.l() * eps,
        })
    }
}

/// `log N(diff; 0, LLᵀ)` given the Cholesky factor.
pub(crate) fn log_density_with(chol: &Cholesky<f64, Dyn>, diff: &DVector<f64>) -> f64 {
    let k = diff.len() as f64;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(diff)
        .expect("Cholesky factor has a positive diagonal");
    -0.5 * (k * LN_2PI + log_det(chol) + w.norm_squared())
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Closed-form `KL(q ‖ p)` between multivariate normals.
pub fn gaussian_kl(q: &GaussianDistribution, p: &GaussianDistribution) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_kl",
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let k = q.dim() as f64;
    let value = match (&q.covariance, &p.covariance) {
        (Covariance::Diagonal(sq), Covariance::Diagonal(sp)) => {
            let mut acc = 0.0;
            for i in 0..q.dim() {
                let d = p.mean[i] - q.mean[i];
                acc += sq[i] / sp[i] + d * d / sp[i] - 1.0 + sp[i].ln() - sq[i].ln();
            }
            0.5 * acc
        }
        _ => {
            let chol_p = p.cholesky()?;
            let chol_q = q.cholesky()?;
            let trace = chol_p.solve(&q.covariance_matrix()).trace();
            let diff = &p.mean - &q.mean;
            let quad = diff.dot(&chol_p.solve(&diff));
            0.5 * (trace + quad - k + log_det(&chol_p) - log_det(&chol_q))
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("gaussian_kl".into()));
    }
    Ok(value.max(0.0))
}
