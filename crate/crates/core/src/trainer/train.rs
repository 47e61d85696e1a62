use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{BandwidthMode, Objective, PenaltyGrouping, TrainConfig};
use super::model::{EncoderOutput, VariationalModel};
use super::objective::{objective, LatentNoise};
use crate::diffengine::{adam_step, AdamConfig, AdamState, Graph};
use crate::error::{Error, ErrorClass, Result};
use crate::independence::{dhsic_v_statistic, hsic_v_statistic, pearson_correlation_sum, SampleBlock};
use crate::io::{csv_writer, fmt_sig12};
use crate::kernels::KernelSpec;
use crate::lingauss::McEstimate;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of leading training rows used for the logged training ELBO.
pub const TRAIN_EVAL_ROWS: usize = 2000;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Metrics recorded at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    /// Mean ELBO over the first [`TRAIN_EVAL_ROWS`] training rows, one fresh
    /// sample each.
    pub train_elbo: f64,
    /// Mean ELBO over the test rows, one fresh sample each.
    pub test_elbo: f64,
    /// Standard error of `test_elbo` across test rows.
    pub test_elbo_se: f64,
    /// HSIC between the `u` and `v` parts of one posterior sample per test
    /// row, median-heuristic bandwidths.
    pub test_hsic: f64,
    /// Sum of absolute Pearson correlations between the posterior means of
    /// `u` and `v` on the test rows.
    pub test_pearson: f64,
    /// Mean of `elbo − objective` over batch-sized chunks of the test rows.
    pub penalty: f64,
    /// Seconds since the start of training. Not written to trace CSVs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped by an error at `step`; the trace holds every earlier record.
    Aborted {
        step: usize,
        message: String,
        class: ErrorClass,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VariationalModel,
    pub trace: Vec<TraceRecord>,
    pub status: RunStatus,
}

impl TrainOutcome {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.trace.last()
    }
}

/// Per-row ELBO with the reparameterised draws given by `noise`.
pub fn per_row_elbo(model: &VariationalModel, x: &DMatrix<f64>, noise: &LatentNoise) -> Result<Vec<f64>> {
    let enc = model.encode(x)?;
    let (u, v) = sample_latents(&enc, noise)?;
    let (mu_x, lv_x) = model.decode(&u, &v)?;
    Ok(row_elbos(&enc, x, &mu_x, &lv_x))
}

fn sample_latents(enc: &EncoderOutput, noise: &LatentNoise) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if noise.u.shape() != enc.mu_u.shape() || noise.v.shape() != enc.mu_v.shape() {
        return Err(Error::DimensionMismatch {
            context: "latent noise",
            expected: enc.mu_u.len() + enc.mu_v.len(),
            found: noise.u.len() + noise.v.len(),
        });
    }
    let draw = |mu: &DMatrix<f64>, lv: &DMatrix<f64>, eps: &DMatrix<f64>| {
        mu + lv.map(|l| (0.5 * l).exp()).component_mul(eps)
    };
    Ok((
        draw(&enc.mu_u, &enc.log_var_u, &noise.u),
        draw(&enc.mu_v, &enc.log_var_v, &noise.v),
    ))
}

fn row_kl(enc: &EncoderOutput, i: usize) -> f64 {
    let block = |mu: &DMatrix<f64>, lv: &DMatrix<f64>| -> f64 {
        mu.row(i)
            .iter()
            .zip(lv.row(i).iter())
            .map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l))
            .sum()
    };
    block(&enc.mu_u, &enc.log_var_u) + block(&enc.mu_v, &enc.log_var_v)
}

fn row_elbos(enc: &EncoderOutput, x: &DMatrix<f64>, mu_x: &DMatrix<f64>, lv_x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let recon: f64 = (0..x.ncols())
                .map(|j| {
                    let d = x[(i, j)] - mu_x[(i, j)];
                    -0.5 * (LN_2PI + lv_x[(i, j)] + d * d * (-lv_x[(i, j)]).exp())
                })
                .sum();
            recon - row_kl(enc, i)
        })
        .collect()
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

fn standalone_penalty_hsic(u: &DMatrix<f64>, v: &DMatrix<f64>, config: &TrainConfig) -> Result<f64> {
    let block = |m: DMatrix<f64>| match config.bandwidth {
        BandwidthMode::PerBatchMedian => SampleBlock::with_median_bandwidth(m),
        BandwidthMode::Fixed { gamma } => SampleBlock::new(m, KernelSpec::gaussian(gamma)?),
    };
    match config.penalty_grouping {
        PenaltyGrouping::Groups => hsic_v_statistic(&block(u.clone())?, &block(v.clone())?),
        PenaltyGrouping::Coordinatewise => {
            let blocks = [u, v]
                .iter()
                .flat_map(|m| (0..m.ncols()).map(move |c| m.columns(c, 1).into_owned()))
                .map(block)
                .collect::<Result<Vec<_>>>()?;
            dhsic_v_statistic(&blocks)
        }
    }
}

/// `elbo − objective` averaged over batch-sized chunks, computed with the
/// standalone estimators.
fn chunked_penalty(
    enc: &EncoderOutput,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<f64> {
    let n = u.nrows();
    let size = config.batch_size.min(n);
    let chunks = n / size;
    let mut total = 0.0;
    for c in 0..chunks {
        let start = c * size;
        total += match config.objective {
            Objective::Vae => 0.0,
            Objective::BetaVae { beta } => {
                let kl: f64 = (start..start + size).map(|i| row_kl(enc, i)).sum::<f64>() / size as f64;
                (beta - 1.0) * kl
            }
            Objective::Hcv { lambda } => {
                let uc = u.rows(start, size).into_owned();
                let vc = v.rows(start, size).into_owned();
                lambda * standalone_penalty_hsic(&uc, &vc, config)?
            }
        };
    }
    Ok(total / chunks as f64)
}

struct Evaluator<'a> {
    config: &'a TrainConfig,
    train_x: DMatrix<f64>,
    test_x: &'a DMatrix<f64>,
    rng: ChaCha8Rng,
    start: Instant,
}

impl Evaluator<'_> {
    fn record(&mut self, model: &VariationalModel, step: usize, epoch: usize) -> Result<TraceRecord> {
        let (lu, lv) = (model.latent_u, model.latent_v);
        let train_noise = LatentNoise::draw(&mut self.rng, self.train_x.nrows(), lu, lv);
        let train_elbo = McEstimate::from_samples(&per_row_elbo(model, &self.train_x, &train_noise)?).mean;

        let test_noise = LatentNoise::draw(&mut self.rng, self.test_x.nrows(), lu, lv);
        let enc = model.encode(self.test_x)?;
        let (u, v) = sample_latents(&enc, &test_noise)?;
        let (mu_x, lv_x) = model.decode(&u, &v)?;
        let test = McEstimate::from_samples(&row_elbos(&enc, self.test_x, &mu_x, &lv_x));
        let test_hsic = hsic_v_statistic(
            &SampleBlock::with_median_bandwidth(u.clone())?,
            &SampleBlock::with_median_bandwidth(v.clone())?,
        )?;
        let test_pearson = pearson_correlation_sum(&enc.mu_u, &enc.mu_v)?;
        let penalty = chunked_penalty(&enc, &u, &v, self.config)?;
        let values = [train_elbo, test.mean, test.std_error, test_hsic, test_pearson, penalty];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluation metrics".into()));
        }
        Ok(TraceRecord {
            step,
            epoch,
            train_elbo,
            test_elbo: test.mean,
            test_elbo_se: test.std_error,
            test_hsic,
            test_pearson,
            penalty,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
        })
    }
}

fn train_step(
    model: &mut VariationalModel,
    adam: &mut AdamState,
    config: &TrainConfig,
    batch: &DMatrix<f64>,
    noise: &LatentNoise,
) -> Result<()> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g)?;
    let terms = objective(&mut g, &bound, batch, config, noise)?;
    let loss = g.scale(terms.objective, -1.0)?;
    let mut grads = g.backward(loss)?;
    let vars: Vec<_> = bound
        .encoder
        .iter()
        .chain(&bound.decoder)
        .flat_map(|l| [l.weights, l.bias])
        .collect();
    let grads: Vec<DMatrix<f64>> = vars.into_iter().map(|v| grads.take(v)).collect();
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    adam_step(&mut model.params_mut(), &grads, adam)
}

/// Trains a fresh model on the rows of `train_x`, evaluating on `test_x`.
///
/// Minibatches are drawn by shuffling once per epoch; a final partial batch
/// is dropped. Errors during training end the run with
/// [`RunStatus::Aborted`] and keep the trace recorded so far; invalid inputs
/// are returned as `Err`.
pub fn train(config: &TrainConfig, train_x: &DMatrix<f64>, test_x: &DMatrix<f64>) -> Result<TrainOutcome> {
    config.validate()?;
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "train/test columns",
            expected: train_x.ncols(),
            found: test_x.ncols(),
        });
    }
    if train_x.nrows() < config.batch_size {
        return Err(Error::Config(format!(
            "batch_size: {} exceeds the {} training rows",
            config.batch_size,
            train_x.nrows()
        )));
    }
    if test_x.nrows() < 2 {
        return Err(Error::TooFewSamples {
            context: "test rows",
            needed: 2,
            got: test_x.nrows(),
        });
    }

    let mut model = VariationalModel::init(config, train_x.ncols(), &mut stream(config.seed, STREAM_INIT))?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), model.params());
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut noise_rng = stream(config.seed, STREAM_NOISE);
    let mut eval = Evaluator {
        config,
        train_x: train_x.rows(0, train_x.nrows().min(TRAIN_EVAL_ROWS)).into_owned(),
        test_x,
        rng: stream(config.seed, STREAM_EVAL),
        start: Instant::now(),
    };

    let mut trace = Vec::new();
    let abort = |step: usize, e: Error| RunStatus::Aborted {
        step,
        message: e.to_string(),
        class: e.class(),
    };
    match eval.record(&model, 0, 0) {
        Ok(r) => trace.push(r),
        Err(e) => {
            return Ok(TrainOutcome {
                model,
                trace,
                status: abort(0, e),
            })
        }
    }

    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut evaluated_at = step;
        for idx in order.chunks_exact(config.batch_size) {
            let batch = rows(train_x, idx);
            let noise = LatentNoise::draw(&mut noise_rng, idx.len(), model.latent_u, model.latent_v);
            if let Err(e) = train_step(&mut model, &mut adam, config, &batch, &noise) {
                return Ok(TrainOutcome {
                    model,
                    trace,
                    status: abort(step + 1, e),
                });
            }
            step += 1;
            if config.eval_every.is_some_and(|k| step % k == 0) {
                match eval.record(&model, step, epoch - 1) {
                    Ok(r) => trace.push(r),
                    Err(e) => {
                        return Ok(TrainOutcome {
                            model,
                            trace,
                            status: abort(step, e),
                        })
                    }
                }
                evaluated_at = step;
            }
        }
        let last_epoch = epoch == config.epochs;
        if evaluated_at != step && (config.eval_every.is_none() || last_epoch) {
            match eval.record(&model, step, epoch) {
                Ok(r) => trace.push(r),
                Err(e) => {
                    return Ok(TrainOutcome {
                        model,
                        trace,
                        status: abort(step, e),
                    })
                }
            }
        } else if let Some(last) = trace.last_mut() {
            if last.step == step {
                last.epoch = epoch;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        status: RunStatus::Completed,
    })
}

pub const TRACE_HEADER: [&str; 8] = [
    "step",
    "epoch",
    "train_elbo",
    "test_elbo",
    "test_elbo_se",
    "test_hsic",
    "test_pearson",
    "penalty",
];

pub(crate) fn trace_fields(r: &TraceRecord) -> [String; 8] {
    [
        r.step.to_string(),
        r.epoch.to_string(),
        fmt_sig12(r.train_elbo),
        fmt_sig12(r.test_elbo),
        fmt_sig12(r.test_elbo_se),
        fmt_sig12(r.test_hsic),
        fmt_sig12(r.test_pearson),
        fmt_sig12(r.penalty),
    ]
}

/// Writes a trace as CSV with 12 significant digits.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record(trace_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_bytes(trace: &[TraceRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf)?;
    Ok(buf)
}
