use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{BandwidthMode, Objective, PenaltyGrouping, TrainConfig, MIN_HCV_BATCH};
use super::model::BoundModel;
use crate::diffengine::{gaussian_log_density, kl_standard_normal, reparameterized_gaussian_sample, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::median_heuristic;

/// Standard-normal noise for the reparameterised `u` and `v` draws of a
/// batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LatentNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, rows: usize, latent_u: usize, latent_v: usize) -> Self {
        let mut gen = |c: usize| DMatrix::from_fn(rows, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = gen(latent_u);
        let v = gen(latent_v);
        Self { u, v }
    }

    pub fn from_seed(seed: u64, rows: usize, latent_u: usize, latent_v: usize) -> Self {
        Self::draw(&mut ChaCha8Rng::seed_from_u64(seed), rows, latent_u, latent_v)
    }
}

/// Graph nodes of one objective evaluation. All scalars are per-datapoint
/// means.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms {
    pub objective: Var,
    pub elbo: Var,
    pub reconstruction: Var,
    pub kl: Var,
    /// The dHSIC value before weighting; only for the HCV objective.
    pub hsic: Option<Var>,
    /// Reparameterised samples shared by the reconstruction and the penalty.
    pub u: Var,
    pub v: Var,
}

fn check_batch(model: &BoundModel, x: &DMatrix<f64>, noise: &LatentNoise) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::TooFewSamples {
            context: "objective batch",
            needed: 1,
            got: 0,
        });
    }
    if x.ncols() != model.data_dim {
        return Err(Error::DimensionMismatch {
            context: "objective batch columns",
            expected: model.data_dim,
            found: x.ncols(),
        });
    }
    if noise.u.shape() != (x.nrows(), model.latent_u) || noise.v.shape() != (x.nrows(), model.latent_v) {
        return Err(Error::DimensionMismatch {
            context: "latent noise",
            expected: x.nrows() * (model.latent_u + model.latent_v),
            found: noise.u.len() + noise.v.len(),
        });
    }
    Ok(())
}

fn build(
    g: &mut Graph,
    model: &BoundModel,
    x: &DMatrix<f64>,
    noise: &LatentNoise,
    kl_weight: f64,
) -> Result<ObjectiveTerms> {
    check_batch(model, x, noise)?;
    let inv_n = 1.0 / x.nrows() as f64;
    let xv = g.input(x.clone())?;
    let enc = model.encode(g, xv)?;
    let u = reparameterized_gaussian_sample(g, enc.mu_u, enc.log_var_u, &noise.u)?;
    let v = reparameterized_gaussian_sample(g, enc.mu_v, enc.log_var_v, &noise.v)?;
    let (mu_x, lv_x) = model.decode(g, u, v)?;
    let recon = gaussian_log_density(g, x, mu_x, lv_x)?;
    let kl_u = kl_standard_normal(g, enc.mu_u, enc.log_var_u)?;
    let kl_v = kl_standard_normal(g, enc.mu_v, enc.log_var_v)?;
    let kl = g.add(kl_u, kl_v)?;
    let elbo_sum = g.sub(recon, kl)?;
    let elbo = g.scale(elbo_sum, inv_n)?;
    let reconstruction = g.scale(recon, inv_n)?;
    let kl_mean = g.scale(kl, inv_n)?;
    let objective = if kl_weight == 1.0 {
        elbo
    } else {
        let weighted = g.scale(kl, kl_weight)?;
        let s = g.sub(recon, weighted)?;
        g.scale(s, inv_n)?
    };
    Ok(ObjectiveTerms {
        objective,
        elbo,
        reconstruction,
        kl: kl_mean,
        hsic: None,
        u,
        v,
    })
}

/// Per-datapoint ELBO with one reparameterised sample per row.
pub fn elbo(g: &mut Graph, model: &BoundModel, x: &DMatrix<f64>, noise: &LatentNoise) -> Result<Var> {
    Ok(build(g, model, x, noise, 1.0)?.elbo)
}

/// The training objective for `config.objective`; maximise
/// [`ObjectiveTerms::objective`].
pub fn objective(
    g: &mut Graph,
    model: &BoundModel,
    x: &DMatrix<f64>,
    config: &TrainConfig,
    noise: &LatentNoise,
) -> Result<ObjectiveTerms> {
    match config.objective {
        Objective::Vae => build(g, model, x, noise, 1.0),
        Objective::BetaVae { beta } => build(g, model, x, noise, beta),
        Objective::Hcv { lambda } => {
            if x.nrows() < MIN_HCV_BATCH {
                return Err(Error::Config(format!(
                    "batch_size: the hcv objective needs at least {MIN_HCV_BATCH} rows, got {}",
                    x.nrows()
                )));
            }
            let mut terms = build(g, model, x, noise, 1.0)?;
            let hsic = penalty_dhsic(g, terms.u, terms.v, config.bandwidth, config.penalty_grouping)?;
            let weighted = g.scale(hsic, lambda)?;
            terms.objective = g.sub(terms.elbo, weighted)?;
            terms.hsic = Some(hsic);
            Ok(terms)
        }
    }
}

fn bandwidth(g: &Graph, z: Var, mode: BandwidthMode) -> Result<f64> {
    match mode {
        BandwidthMode::Fixed { gamma } => Ok(gamma),
        BandwidthMode::PerBatchMedian => median_heuristic(g.value(z)),
    }
}

/// Gaussian Gram matrix of the rows of `z`, with a constant bandwidth.
pub fn graph_gaussian_gram(g: &mut Graph, z: Var, gamma: f64) -> Result<Var> {
    let d = g.pairwise_sq_dist(z)?;
    let scaled = g.scale(d, -gamma)?;
    g.exp(scaled)
}

/// dHSIC V-statistic of the variables whose Gram matrices are `grams`:
/// `mean(Π K_j) + Π mean(K_j) − (2/n) Σ_i Π_j (K_j 1)_i / n`.
pub fn graph_dhsic(g: &mut Graph, grams: &[Var]) -> Result<Var> {
    if grams.len() < 2 {
        return Err(Error::Config("dHSIC needs at least two variables".into()));
    }
    let n = g.shape(grams[0]).0;
    let inv_n = 1.0 / n as f64;
    let inv_n2 = inv_n * inv_n;

    let mut prod = grams[0];
    for &k in &grams[1..] {
        prod = g.mul(prod, k)?;
    }
    let joint_sum = g.sum(prod)?;
    let joint = g.scale(joint_sum, inv_n2)?;

    let mut product_of_means: Option<Var> = None;
    let mut row_product: Option<Var> = None;
    for &k in grams {
        let total = g.sum(k)?;
        let mean = g.scale(total, inv_n2)?;
        product_of_means = Some(match product_of_means {
            None => mean,
            Some(p) => g.mul(p, mean)?,
        });
        let rows = g.sum_rows(k)?;
        let rows = g.scale(rows, inv_n)?;
        row_product = Some(match row_product {
            None => rows,
            Some(p) => g.mul(p, rows)?,
        });
    }
    let cross_sum = g.sum(row_product.expect("at least two grams"))?;
    let cross = g.scale(cross_sum, 2.0 * inv_n)?;
    let t = g.add(joint, product_of_means.expect("at least two grams"))?;
    g.sub(t, cross)
}

/// The penalty's dHSIC between the `u` and `v` samples.
pub fn penalty_dhsic(
    g: &mut Graph,
    u: Var,
    v: Var,
    mode: BandwidthMode,
    grouping: PenaltyGrouping,
) -> Result<Var> {
    let mut grams = Vec::new();
    match grouping {
        PenaltyGrouping::Groups => {
            for z in [u, v] {
                let gamma = bandwidth(g, z, mode)?;
                grams.push(graph_gaussian_gram(g, z, gamma)?);
            }
        }
        PenaltyGrouping::Coordinatewise => {
            for z in [u, v] {
                for c in 0..g.shape(z).1 {
                    let col = g.columns(z, c, 1)?;
                    let gamma = bandwidth(g, col, mode)?;
                    grams.push(graph_gaussian_gram(g, col, gamma)?);
                }
            }
        }
    }
    graph_dhsic(g, &grams)
}
