use nalgebra::{DMatrix, DVector};

use super::model::VariationalModel;
use crate::error::{Error, Result};
use crate::lingauss::{decompose_variational_gap, GapDecomposition, GaussianDistribution, LinGaussModel, MeanFieldPosterior};

/// The encoder's diagonal Gaussians for every row of `x`, in the layout the
/// linear-Gaussian posterior uses.
pub fn encoder_posteriors(model: &VariationalModel, x: &DMatrix<f64>) -> Result<Vec<MeanFieldPosterior>> {
    let enc = model.encode(x)?;
    let diag = |mu: &DMatrix<f64>, lv: &DMatrix<f64>, i: usize| {
        GaussianDistribution::diagonal(
            DVector::from_iterator(mu.ncols(), mu.row(i).iter().copied()),
            DVector::from_iterator(lv.ncols(), lv.row(i).iter().map(|l| l.exp())),
        )
    };
    (0..x.nrows())
        .map(|i| {
            Ok(MeanFieldPosterior {
                v: diag(&enc.mu_v, &enc.log_var_v, i)?,
                u: diag(&enc.mu_u, &enc.log_var_u, i)?,
            })
        })
        .collect()
}

/// Gap decomposition of a trained encoder against the exact posterior of
/// `truth`, averaged over the rows of `x`.
///
/// The encoder's `u` and `v` blocks are compared coordinate by coordinate
/// with the true `u` and `v`.
pub fn evaluate_gap(model: &VariationalModel, x: &DMatrix<f64>, truth: &LinGaussModel) -> Result<GapDecomposition> {
    let dims = truth.dims;
    if model.latent_u != dims.u || model.latent_v != dims.v {
        return Err(Error::DimensionMismatch {
            context: "encoder latent blocks vs model",
            expected: dims.u + dims.v,
            found: model.latent_u + model.latent_v,
        });
    }
    if model.data_dim != dims.obs {
        return Err(Error::DimensionMismatch {
            context: "encoder input vs model observations",
            expected: dims.obs,
            found: model.data_dim,
        });
    }
    let posterior = truth.exact_posterior()?;
    let q = encoder_posteriors(model, x)?;
    decompose_variational_gap(&posterior, &q, x)
}
