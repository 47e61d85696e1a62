use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffengine::AdamConfig;
use crate::error::{Error, Result};
use crate::lingauss::{sample_model, LabeledDataset, LinGaussModel, ModelDims};

/// Smallest minibatch accepted by the HSIC-penalised objective.
pub const MIN_HCV_BATCH: usize = 16;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    Vae,
    BetaVae { beta: f64 },
    Hcv { lambda: f64 },
}

impl Objective {
    pub fn label(&self) -> &'static str {
        match self {
            Objective::Vae => "vae",
            Objective::BetaVae { .. } => "beta_vae",
            Objective::Hcv { .. } => "hcv",
        }
    }

    /// β or λ; `None` for the plain VAE.
    pub fn weight(&self) -> Option<f64> {
        match *self {
            Objective::Vae => None,
            Objective::BetaVae { beta } => Some(beta),
            Objective::Hcv { lambda } => Some(lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Vae => Ok(()),
            Objective::BetaVae { beta } if beta > 0.0 && beta.is_finite() => Ok(()),
            Objective::BetaVae { beta } => Err(Error::Config(format!(
                "objective.beta: must be positive and finite, got {beta}"
            ))),
            Objective::Hcv { lambda } if lambda >= 0.0 && lambda.is_finite() => Ok(()),
            Objective::Hcv { lambda } => Err(Error::Config(format!(
                "objective.lambda: must be non-negative and finite, got {lambda}"
            ))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.weight() {
            None => write!(f, "{}", self.label()),
            Some(w) => write!(f, "{}={}", self.label(), w),
        }
    }
}

/// How the Gaussian kernel bandwidth of the penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthMode {
    /// Median heuristic on each minibatch's detached samples.
    PerBatchMedian,
    Fixed { gamma: f64 },
}

/// Which variables enter the dHSIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyGrouping {
    /// Two variables: the `u` block and the `v` block.
    Groups,
    /// One variable per latent coordinate.
    Coordinatewise,
}

/// Configuration of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub latent_u: usize,
    pub latent_v: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub bandwidth: BandwidthMode,
    pub penalty_grouping: PenaltyGrouping,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Evaluate every this many optimizer steps; `None` evaluates after each
    /// epoch. An evaluation at step 0 is always recorded.
    pub eval_every: Option<usize>,
    /// Fixed decoder log-variance; `None` learns it.
    pub decoder_log_var: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Vae,
            latent_u: 4,
            latent_v: 4,
            batch_size: 128,
            epochs: 30,
            lr: 1e-3,
            seed: 0,
            bandwidth: BandwidthMode::PerBatchMedian,
            penalty_grouping: PenaltyGrouping::Groups,
            encoder_widths: vec![64, 64],
            decoder_widths: vec![64, 64],
            eval_every: None,
            decoder_log_var: None,
        }
    }
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.latent_u == 0 || self.latent_v == 0 {
            return Err(config_err("latent_u, latent_v: must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(config_err(format!("batch_size: must be at least 2, got {}", self.batch_size)));
        }
        if matches!(self.objective, Objective::Hcv { .. }) && self.batch_size < MIN_HCV_BATCH {
            return Err(config_err(format!(
                "batch_size: the hcv objective needs at least {MIN_HCV_BATCH}, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs: must be positive".into()));
        }
        AdamConfig::with_lr(self.lr)
            .validate()
            .map_err(|_| config_err(format!("lr: must be positive and finite, got {}", self.lr)))?;
        if let BandwidthMode::Fixed { gamma } = self.bandwidth {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(config_err(format!("bandwidth.gamma: must be positive, got {gamma}")));
            }
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) {
            return Err(config_err("encoder_widths, decoder_widths: widths must be positive".into()));
        }
        if self.eval_every == Some(0) {
            return Err(config_err("eval_every: must be positive or null".into()));
        }
        if let Some(lv) = self.decoder_log_var {
            if !lv.is_finite() {
                return Err(config_err("decoder_log_var: must be finite or null".into()));
            }
        }
        Ok(())
    }
}

/// The synthetic linear-Gaussian dataset a run trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dims: ModelDims,
    pub noise_scale: f64,
    /// Seed of the loading matrices.
    pub model_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Seed of the training rows; the test rows use `data_seed + 1`.
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::DEFAULT,
            noise_scale: 1.0,
            model_seed: 0,
            n_train: 10_000,
            n_test: 2_000,
            data_seed: 1,
        }
    }
}

/// A generating model with its train and test draws.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub model: LinGaussModel,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.n_train < 2 || self.n_test < 2 {
            return Err(config_err("n_train, n_test: need at least two rows each".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ExperimentData> {
        self.validate()?;
        let model = sample_model(self.dims, self.noise_scale, self.model_seed)?;
        let train = model.generate_data(self.n_train, self.data_seed)?;
        let test = model.generate_data(self.n_test, self.data_seed.wrapping_add(1))?;
        Ok(ExperimentData { model, train, test })
    }
}
