//! Linear-Gaussian generative system with analytic posterior and evidence.
//!
//! ```text
//! v ~ Normal(0, I_n)        u ~ Normal(0, I_m)
//! x | u, v ~ Normal(A v + B u, noise_scale · I_d + C Cᵀ)
//! ```
//!
//! The columns of `A`, `B`, `C` are drawn iid `Normal(0, I_d / n)`,
//! `Normal(0, I_d / m)` and `Normal(0, I_d / k)`. Stacked latents are always
//! ordered `(v, u)`; use [`LatentLayout`] to address the two blocks.

mod gaussian;
pub mod io;

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gaussian::{gaussian_kl, Covariance, GaussianDistribution};

use crate::error::{ensure_finite, Error, Result};

/// Sizes of the linear-Gaussian system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Dimension of `v` (columns of `A`).
    pub v: usize,
    /// Dimension of `u` (columns of `B`).
    pub u: usize,
    /// Rank of the correlated noise (columns of `C`).
    pub noise_rank: usize,
    /// Observation dimension.
    pub obs: usize,
}

impl ModelDims {
    pub const DEFAULT: ModelDims = ModelDims {
        v: 4,
        u: 4,
        noise_rank: 4,
        obs: 16,
    };

    pub fn validate(&self) -> Result<()> {
        if self.v == 0 || self.u == 0 || self.noise_rank == 0 || self.obs == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> LatentLayout {
        LatentLayout {
            v: self.v,
            u: self.u,
        }
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Position of the `v` and `u` blocks inside a stacked latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentLayout {
    pub v: usize,
    pub u: usize,
}

impl LatentLayout {
    pub fn total(&self) -> usize {
        self.v + self.u
    }

    pub fn v_range(&self) -> Range<usize> {
        0..self.v
    }

    pub fn u_range(&self) -> Range<usize> {
        self.v..self.v + self.u
    }
}

/// A drawn instance of the linear-Gaussian system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinGaussModel {
    pub dims: ModelDims,
    /// `obs × v` loading of `v`.
    pub a: DMatrix<f64>,
    /// `obs × u` loading of `u`.
    pub b: DMatrix<f64>,
    /// `obs × noise_rank` factor of the correlated noise.
    pub c: DMatrix<f64>,
    /// Isotropic part of the observation noise covariance.
    pub noise_scale: f64,
    pub seed: u64,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    // Filled column by column so each column is one iid draw.
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Draws `A`, `B`, `C` with the column laws above.
pub fn sample_model(dims: ModelDims, noise_scale: f64, seed: u64) -> Result<LinGaussModel> {
    dims.validate()?;
    if !(noise_scale.is_finite() && noise_scale > 0.0) {
        return Err(Error::Config(format!("noise_scale must be positive, got {noise_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_matrix(&mut rng, dims.obs, dims.v, (1.0 / dims.v as f64).sqrt());
    let b = gaussian_matrix(&mut rng, dims.obs, dims.u, (1.0 / dims.u as f64).sqrt());
    let c = gaussian_matrix(&mut rng, dims.obs, dims.noise_rank, (1.0 / dims.noise_rank as f64).sqrt());
    Ok(LinGaussModel {
        dims,
        a,
        b,
        c,
        noise_scale,
        seed,
    })
}

/// Observations with the latents that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `N × obs`.
    pub x: DMatrix<f64>,
    /// `N × u`.
    pub u: DMatrix<f64>,
    /// `N × v`.
    pub v: DMatrix<f64>,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

impl LinGaussModel {
    /// Checks matrix shapes against `dims` and the noise scale.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = self.dims;
        for (m, cols, what) in [
            (&self.a, d.v, "A"),
            (&self.b, d.u, "B"),
            (&self.c, d.noise_rank, "C"),
        ] {
            if m.nrows() != d.obs || m.ncols() != cols {
                return Err(Error::Format(format!(
                    "matrix {what} is {}×{}, expected {}×{}",
                    m.nrows(),
                    m.ncols(),
                    d.obs,
                    cols
                )));
            }
        }
        ensure_finite(self.a.iter().chain(self.b.iter()).chain(self.c.iter()), || {
            "model matrices".into()
        })?;
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::Config(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }

    /// `noise_scale · I + C Cᵀ`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        let d = self.dims.obs;
        DMatrix::identity(d, d) * self.noise_scale + &self.c * self.c.transpose()
    }

    /// `noise_scale · I + C Cᵀ + A Aᵀ + B Bᵀ`.
    pub fn marginal_covariance(&self) -> DMatrix<f64> {
        self.noise_covariance() + &self.a * self.a.transpose() + &self.b * self.b.transpose()
    }

    /// `[A, B]`, the loading of the stacked `(v, u)` latent.
    pub fn stacked_loading(&self) -> DMatrix<f64> {
        let d = self.dims;
        let mut w = DMatrix::zeros(d.obs, d.v + d.u);
        w.view_mut((0, 0), (d.obs, d.v)).copy_from(&self.a);
        w.view_mut((0, d.v), (d.obs, d.u)).copy_from(&self.b);
        w
    }

    /// Draws `n_rows` iid rows of `(x, u, v)`.
    ///
    /// Noise is drawn as `√noise_scale · ε₁ + C ε₂`, which has exactly the
    /// covariance `noise_scale · I + C Cᵀ`.
    pub fn generate_data(&self, n_rows: usize, seed: u64) -> Result<LabeledDataset> {
        self.validate()?;
        if n_rows == 0 {
            return Err(Error::Config("dataset needs at least one row".into()));
        }
        let d = self.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n_rows, d.obs);
        let mut u = DMatrix::zeros(n_rows, d.u);
        let mut v = DMatrix::zeros(n_rows, d.v);
        let sqrt_noise = self.noise_scale.sqrt();
        let mut normal = |len: usize| -> DVector<f64> {
            DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        for row in 0..n_rows {
            let vr = normal(d.v);
            let ur = normal(d.u);
            let e1 = normal(d.obs);
            let e2 = normal(d.noise_rank);
            let xr = &self.a * &vr + &self.b * &ur + e1 * sqrt_noise + &self.c * e2;
            x.row_mut(row).copy_from(&xr.transpose());
            u.row_mut(row).copy_from(&ur.transpose());
            v.row_mut(row).copy_from(&vr.transpose());
        }
        Ok(LabeledDataset { x, u, v, seed })
    }

    /// Precomputes the posterior operator shared by every observation.
    ///
    /// `Σ⁻¹ = I + [A, B]ᵀ N⁻¹ [A, B]` and `H = Σ [A, B]ᵀ N⁻¹` with
    /// `N = noise_scale · I + C Cᵀ`. `N⁻¹` is only ever applied through
    /// Cholesky solves.
    pub fn exact_posterior(&self) -> Result<ExactPosterior> {
        self.validate()?;
        let w = self.stacked_loading();
        let noise_chol = cholesky(self.noise_covariance(), "observation noise covariance")?;
        let ninv_w = noise_chol.solve(&w);
        let k = self.dims.v + self.dims.u;
        let mut precision = DMatrix::identity(k, k) + w.transpose() * &ninv_w;
        symmetrize(&mut precision);
        let precision_chol = cholesky(precision, "posterior precision")?;
        let mut covariance = precision_chol.inverse();
        symmetrize(&mut covariance);
        let gain = &covariance * ninv_w.transpose();
        let covariance_chol = cholesky(covariance.clone(), "posterior covariance")?;
        Ok(ExactPosterior {
            layout: self.dims.layout(),
            gain,
            covariance,
            covariance_chol,
        })
    }

    /// Mean per-row log density of `x` under the marginal
    /// `Normal(0, noise_scale · I + C Cᵀ + A Aᵀ + B Bᵀ)`.
    pub fn marginal_log_likelihood(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.validate()?;
        if x.ncols() != self.dims.obs {
            return Err(Error::DimensionMismatch {
                context: "marginal_log_likelihood",
                expected: self.dims.obs,
                found: x.ncols(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::TooFewSamples {
                context: "marginal_log_likelihood",
                needed: 1,
                got: 0,
            });
        }
        let mut cov = self.marginal_covariance();
        symmetrize(&mut cov);
        let chol = cholesky(cov, "marginal covariance")?;
        let total: f64 = x
            .row_iter()
            .map(|r| gaussian::log_density_with(&chol, &r.transpose()))
            .sum();
        Ok(total / x.nrows() as f64)
    }

    /// Per-row marginal log densities (for standard errors).
    pub fn marginal_log_densities(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.validate()?;
        if x.ncols() != self.dims.obs {
            return Err(Error::DimensionMismatch {
                context: "marginal_log_densities",
                expected: self.dims.obs,
                found: x.ncols(),
            });
        }
        let mut cov = self.marginal_covariance();
        symmetrize(&mut cov);
        let chol = cholesky(cov, "marginal covariance")?;
        Ok(x
            .row_iter()
            .map(|r| gaussian::log_density_with(&chol, &r.transpose()))
            .collect())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// The posterior `p(v, u | x) = Normal(H x, Σ)` of a [`LinGaussModel`].
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    layout: LatentLayout,
    gain: DMatrix<f64>,
    covariance: DMatrix<f64>,
    covariance_chol: Cholesky<f64, Dyn>,
}

impl ExactPosterior {
    pub fn layout(&self) -> LatentLayout {
        self.layout
    }

    /// `H`, mapping an observation to the posterior mean of `(v, u)`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `Σ`, shared by all observations.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    fn check_obs(&self, len: usize) -> Result<()> {
        if len != self.gain.ncols() {
            return Err(Error::DimensionMismatch {
                context: "exact_posterior",
                expected: self.gain.ncols(),
                found: len,
            });
        }
        Ok(())
    }

    /// Posterior over the stacked `(v, u)` given one observation.
    pub fn at(&self, x: &DVector<f64>) -> Result<GaussianDistribution> {
        self.check_obs(x.len())?;
        GaussianDistribution::full(&self.gain * x, self.covariance.clone())
    }

    /// Posterior means for every row of `x`, as an `N × (v + u)` matrix.
    pub fn means(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_obs(x.ncols())?;
        Ok(x * self.gain.transpose())
    }

    /// One posterior draw per row of `x`, returned as `(v, u)` sample matrices.
    pub fn sample_rows<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let means = self.means(x)?;
        let k = self.layout.total();
        let l = self.covariance_chol.l();
        let mut draws = means;
        for mut row in draws.row_iter_mut() {
            let eps = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            row += (&l * eps).transpose();
        }
        let v = draws.columns(0, self.layout.v).into_owned();
        let u = draws.columns(self.layout.v, self.layout.u).into_owned();
        Ok((v, u))
    }

    /// Log density of the stacked latent `z` under `p(v, u | x)`.
    pub fn log_density(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        self.check_obs(x.len())?;
        let diff = z - &self.gain * x;
        Ok(gaussian::log_density_with(&self.covariance_chol, &diff))
    }
}

/// Mean-field variational posterior for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldPosterior {
    pub v: GaussianDistribution,
    pub u: GaussianDistribution,
}

impl MeanFieldPosterior {
    /// The product `q(v) q(u)` as one distribution over `(v, u)`.
    pub fn joint(&self) -> GaussianDistribution {
        GaussianDistribution::independent_joint(&self.v, &self.u)
    }
}

/// Split of the variational gap into marginal fit and mean-field coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDecomposition {
    /// Mean over observations of `KL(q(v, u | x) ‖ p(v, u | x))`.
    pub total_gap: f64,
    /// Mean over observations of `KL(q(v|x) ‖ p(v|x)) + KL(q(u|x) ‖ p(u|x))`.
    pub marginal_kl_sum: f64,
    /// `total_gap − marginal_kl_sum`, i.e. `E_q log [p(v|x) p(u|x) / p(v, u|x)]`.
    pub coupling_term: f64,
}

fn check_rows(x: &DMatrix<f64>, q: &[MeanFieldPosterior], layout: LatentLayout) -> Result<()> {
    if q.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "variational posteriors per observation",
            expected: x.nrows(),
            found: q.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::TooFewSamples {
            context: "decompose_variational_gap",
            needed: 1,
            got: 0,
        });
    }
    for qi in q {
        if qi.v.dim() != layout.v || qi.u.dim() != layout.u {
            return Err(Error::DimensionMismatch {
                context: "variational posterior blocks",
                expected: layout.total(),
                found: qi.v.dim() + qi.u.dim(),
            });
        }
    }
    Ok(())
}

/// Decomposes the mean variational gap of mean-field posteriors `q` (one per
/// row of `x`) against the exact posterior.
pub fn decompose_variational_gap(
    posterior: &ExactPosterior,
    q: &[MeanFieldPosterior],
    x: &DMatrix<f64>,
) -> Result<GapDecomposition> {
    let layout = posterior.layout();
    check_rows(x, q, layout)?;
    let (mut total, mut marginal) = (0.0, 0.0);
    for (row, qi) in x.row_iter().zip(q) {
        let p = posterior.at(&row.transpose())?;
        total += gaussian_kl(&qi.joint(), &p)?;
        marginal += gaussian_kl(&qi.v, &p.marginal(layout.v_range()))?;
        marginal += gaussian_kl(&qi.u, &p.marginal(layout.u_range()))?;
    }
    let n = x.nrows() as f64;
    let total_gap = total / n;
    let marginal_kl_sum = marginal / n;
    Ok(GapDecomposition {
        total_gap,
        marginal_kl_sum,
        coupling_term: total_gap - marginal_kl_sum,
    })
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        McEstimate {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Monte Carlo estimate of the coupling term
/// `E_q log [p(v|x) p(u|x) / p(v, u|x)]`, averaged over rows of `x`.
///
/// Draw `s` uses observation `s mod N`, so each row receives an equal share
/// of the `n_samples` draws.
pub fn coupling_term_monte_carlo(
    posterior: &ExactPosterior,
    q: &[MeanFieldPosterior],
    x: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let layout = posterior.layout();
    check_rows(x, q, layout)?;
    if n_samples < 2 {
        return Err(Error::Config("need at least two Monte Carlo samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
    let exact: Vec<GaussianDistribution> =
        rows.iter().map(|r| posterior.at(r)).collect::<Result<_>>()?;
    let v_marg: Vec<GaussianDistribution> =
        exact.iter().map(|p| p.marginal(layout.v_range())).collect();
    let u_marg: Vec<GaussianDistribution> =
        exact.iter().map(|p| p.marginal(layout.u_range())).collect();
    let joints: Vec<GaussianDistribution> = q.iter().map(MeanFieldPosterior::joint).collect();

    let mut values = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let i = s % rows.len();
        let z = joints[i].sample(&mut rng)?;
        let zv = z.rows(0, layout.v).into_owned();
        let zu = z.rows(layout.v, layout.u).into_owned();
        let value = v_marg[i].log_density(&zv)? + u_marg[i].log_density(&zu)?
            - posterior.log_density(&rows[i], &z)?;
        values.push(value);
    }
    Ok(McEstimate::from_samples(&values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> ModelDims {
        ModelDims {
            v: 2,
            u: 2,
            noise_rank: 2,
            obs: 3,
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_model(small_dims(), 1.0, 9).unwrap();
        let b = sample_model(small_dims(), 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_model(small_dims(), 1.0, 10).unwrap());
        let da = a.generate_data(50, 3).unwrap();
        assert_eq!(da, a.generate_data(50, 3).unwrap());
    }

    #[test]
    fn unit_model_is_a_scalar_normal_draw() {
        let dims = ModelDims {
            v: 1,
            u: 1,
            noise_rank: 1,
            obs: 1,
        };
        let m = sample_model(dims, 1.0, 4).unwrap();
        assert_eq!(m.a.shape(), (1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let first: f64 = rng.sample(StandardNormal);
        assert_eq!(m.a[(0, 0)], first);
    }

    #[test]
    fn frobenius_norm_of_a_matches_column_law() {
        let dims = ModelDims::DEFAULT;
        let mean: f64 = (0..100)
            .map(|s| sample_model(dims, 1.0, s).unwrap().a.norm_squared())
            .sum::<f64>()
            / 100.0;
        let d = dims.obs as f64;
        assert!((mean - d).abs() < 0.1 * d, "mean ‖A‖² = {mean}");
    }

    #[test]
    fn rejects_bad_configuration() {
        let mut dims = small_dims();
        dims.v = 0;
        assert!(matches!(sample_model(dims, 1.0, 0), Err(Error::Config(_))));
        assert!(sample_model(small_dims(), 0.0, 0).is_err());
        let m = sample_model(small_dims(), 1.0, 0).unwrap();
        assert!(m.generate_data(0, 1).is_err());
    }

    fn zero_loading(mut m: LinGaussModel) -> LinGaussModel {
        m.a.fill(0.0);
        m.b.fill(0.0);
        m
    }

    #[test]
    fn zero_loading_gives_prior_posterior() {
        let m = zero_loading(sample_model(small_dims(), 1.3, 2).unwrap());
        let post = m.exact_posterior().unwrap();
        assert_eq!(post.covariance(), &DMatrix::identity(4, 4));
        let p = post.at(&DVector::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        assert_eq!(p.mean(), &DVector::zeros(4));
    }

    #[test]
    fn zero_observation_gives_zero_mean() {
        let m = sample_model(small_dims(), 1.0, 2).unwrap();
        let p = m.exact_posterior().unwrap().at(&DVector::zeros(3)).unwrap();
        assert_eq!(p.mean(), &DVector::zeros(4));
    }

    #[test]
    fn scalar_posterior_by_hand() {
        // x = a v + b u + e, Var(e) = λ + c². Posterior precision
        // I + [a b]ᵀ[a b] / s with s = λ + c².
        let m = LinGaussModel {
            dims: ModelDims {
                v: 1,
                u: 1,
                noise_rank: 1,
                obs: 1,
            },
            a: DMatrix::from_element(1, 1, 0.8),
            b: DMatrix::from_element(1, 1, -1.5),
            c: DMatrix::from_element(1, 1, 0.5),
            noise_scale: 2.0,
            seed: 0,
        };
        let s: f64 = 2.0 + 0.25;
        let (a, b) = (0.8, -1.5);
        // Conditioning the joint: Cov(z, x) = [a, b], Var(x) = a² + b² + s.
        let vx = a * a + b * b + s;
        let expected_cov = [[1.0 - a * a / vx, -a * b / vx], [-a * b / vx, 1.0 - b * b / vx]];
        let expected_gain = [a / vx, b / vx];
        let post = m.exact_posterior().unwrap();
        for i in 0..2 {
            assert!((post.gain()[(i, 0)] - expected_gain[i]).abs() < 1e-14);
            for j in 0..2 {
                assert!((post.covariance()[(i, j)] - expected_cov[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn standard_normal_log_likelihood_at_mode() {
        let dims = ModelDims {
            v: 1,
            u: 1,
            noise_rank: 1,
            obs: 2,
        };
        let mut m = zero_loading(sample_model(dims, 1.0, 0).unwrap());
        m.c.fill(0.0);
        let ll = m.marginal_log_likelihood(&DMatrix::zeros(3, 2)).unwrap();
        assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!((ll + 1.837_877).abs() < 1e-6);
    }

    #[test]
    fn marginal_log_likelihood_shape_check() {
        let m = sample_model(small_dims(), 1.0, 0).unwrap();
        assert!(matches!(
            m.marginal_log_likelihood(&DMatrix::zeros(2, 5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gap_with_exact_marginals_is_pure_coupling() {
        let m = sample_model(small_dims(), 0.7, 5).unwrap();
        let data = m.generate_data(10, 1).unwrap();
        let post = m.exact_posterior().unwrap();
        let layout = post.layout();
        let q: Vec<MeanFieldPosterior> = data
            .x
            .row_iter()
            .map(|r| {
                let p = post.at(&r.transpose()).unwrap();
                MeanFieldPosterior {
                    v: p.marginal(layout.v_range()),
                    u: p.marginal(layout.u_range()),
                }
            })
            .collect();
        let gap = decompose_variational_gap(&post, &q, &data.x).unwrap();
        assert!(gap.marginal_kl_sum.abs() < 1e-12);
        assert_eq!(gap.coupling_term, gap.total_gap - gap.marginal_kl_sum);
        assert!(gap.coupling_term > 0.0);
    }

    #[test]
    fn gap_vanishes_for_factorised_prior_posterior() {
        let m = zero_loading(sample_model(small_dims(), 1.0, 5).unwrap());
        let data = m.generate_data(5, 1).unwrap();
        let post = m.exact_posterior().unwrap();
        let q = vec![
            MeanFieldPosterior {
                v: GaussianDistribution::standard(2),
                u: GaussianDistribution::standard(2),
            };
            5
        ];
        let gap = decompose_variational_gap(&post, &q, &data.x).unwrap();
        assert!(gap.total_gap.abs() < 1e-14);
        assert!(gap.marginal_kl_sum.abs() < 1e-14);
        assert!(gap.coupling_term.abs() < 1e-14);
    }
}
