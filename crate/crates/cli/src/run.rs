use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hcv_core::io::{fmt_sig12, write_atomic};
use hcv_core::lingauss::io::{dataset_to_csv, model_to_json};
use hcv_core::lingauss::{sample_model, ModelDims};
use hcv_core::trainer::{
    exact_reference, sweep_on, trace_csv_bytes, train, BandwidthMode, DataConfig, Objective, PenaltyGrouping,
    RunStatus, SweepConfig, TrainConfig,
};
use hcv_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{digest_outputs, now, sha256_file, FileDigest, RunManifest, MANIFEST_FORMAT};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn input_digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.to_string_lossy().into_owned(),
        sha256: sha256_file(path)?,
    })
}

struct ManifestDraft {
    command: &'static str,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<FileDigest>,
    started_at: String,
}

impl ManifestDraft {
    fn new(command: &'static str, config: &impl Serialize, seed: u64, inputs: Vec<FileDigest>) -> Result<Self> {
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            seed,
            inputs,
            started_at: now(),
        })
    }

    fn finish(self, out_dir: &Path, outputs: &[PathBuf]) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            command: self.command.into(),
            config: self.config,
            seed: self.seed,
            version: VERSION.into(),
            inputs: self.inputs,
            outputs: digest_outputs(out_dir, outputs)?,
            started_at: self.started_at,
            finished_at: now(),
        };
        manifest.write(out_dir)?;
        Ok(manifest)
    }
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub dims: ModelDims,
    pub noise_scale: f64,
    pub model_seed: u64,
    pub rows: usize,
    pub data_seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 4)]
    pub v: usize,
    #[arg(long, default_value_t = 4)]
    pub u: usize,
    #[arg(long, default_value_t = 4)]
    pub noise_rank: usize,
    #[arg(long, default_value_t = 16)]
    pub obs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// Seed of the loading matrices.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    /// Seed of the rows.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl GenArgs {
    pub fn config(&self) -> GenConfig {
        GenConfig {
            dims: ModelDims {
                v: self.v,
                u: self.u,
                noise_rank: self.noise_rank,
                obs: self.obs,
            },
            noise_scale: self.noise_scale,
            model_seed: self.seed,
            rows: self.rows,
            data_seed: self.data_seed,
        }
    }
}

pub fn execute_gen(cfg: &GenConfig, out_dir: &Path, out: &mut dyn Write) -> CliResult<RunManifest> {
    let draft = ManifestDraft::new("gen", cfg, cfg.model_seed, Vec::new())?;
    let model = sample_model(cfg.dims, cfg.noise_scale, cfg.model_seed)?;
    let data = model.generate_data(cfg.rows, cfg.data_seed)?;
    std::fs::create_dir_all(out_dir)?;
    let model_path = out_dir.join("model.json");
    let data_path = out_dir.join("data.csv");
    write_atomic(&model_path, model_to_json(&model)?.as_bytes())?;
    write_atomic(&data_path, &dataset_to_csv(&data)?)?;
    writeln!(out, "wrote {} and {}", model_path.display(), data_path.display())?;
    draft.finish(out_dir, &[model_path, data_path])
}

// ---------------------------------------------------------------- train

/// Everything `hcv train` needs; the JSON accepted by `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainJob {
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Also evaluate the exact-posterior reference metrics.
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveKind {
    Vae,
    BetaVae,
    Hcv,
}

/// Flags shared by `train` and `sweep`.
#[derive(Debug, Args, Default)]
pub struct CommonTrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Evaluate every N optimizer steps instead of every epoch.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Fixed penalty bandwidth instead of the per-batch median heuristic.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Penalise dHSIC over single latent coordinates instead of the u/v blocks.
    #[arg(long)]
    pub coordinatewise: bool,
    /// Fix the decoder log-variance instead of learning it.
    #[arg(long, allow_hyphen_values = true)]
    pub decoder_log_var: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

impl CommonTrainFlags {
    fn apply(&self, train: &mut TrainConfig, data: &mut DataConfig) {
        if let Some(v) = self.epochs {
            train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = self.lr {
            train.lr = v;
        }
        if let Some(v) = self.eval_every {
            train.eval_every = Some(v);
        }
        if let Some(gamma) = self.gamma {
            train.bandwidth = BandwidthMode::Fixed { gamma };
        }
        if self.coordinatewise {
            train.penalty_grouping = PenaltyGrouping::Coordinatewise;
        }
        if let Some(v) = self.decoder_log_var {
            train.decoder_log_var = Some(v);
        }
        if let Some(v) = self.n_train {
            data.n_train = v;
        }
        if let Some(v) = self.n_test {
            data.n_test = v;
        }
        if let Some(v) = self.model_seed {
            data.model_seed = v;
        }
        if let Some(v) = self.data_seed {
            data.data_seed = v;
        }
        if let Some(v) = self.noise_scale {
            data.noise_scale = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with `train`, `data` and `oracle` sections; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveKind>,
    /// β for `--objective beta-vae`.
    #[arg(long)]
    pub beta: Option<f64>,
    /// λ for `--objective hcv`.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonTrainFlags,
    /// Report the exact-posterior reference metrics alongside the run.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<(TrainJob, Vec<FileDigest>)> {
        let (mut job, inputs) = match &self.config {
            Some(p) => (read_json::<TrainJob>(p)?, vec![input_digest(p)?]),
            None => (TrainJob::default(), Vec::new()),
        };
        match self.objective {
            None => {
                if self.beta.is_some() || self.lambda.is_some() {
                    return Err(Error::Config("--beta/--lambda need --objective".into()));
                }
            }
            Some(ObjectiveKind::Vae) => job.train.objective = Objective::Vae,
            Some(ObjectiveKind::BetaVae) => {
                let beta = self
                    .beta
                    .ok_or_else(|| Error::Config("--objective beta-vae needs --beta".into()))?;
                job.train.objective = Objective::BetaVae { beta };
            }
            Some(ObjectiveKind::Hcv) => {
                let lambda = self
                    .lambda
                    .ok_or_else(|| Error::Config("--objective hcv needs --lambda".into()))?;
                job.train.objective = Objective::Hcv { lambda };
            }
        }
        if let Some(seed) = self.seed {
            job.train.seed = seed;
        }
        self.common.apply(&mut job.train, &mut job.data);
        job.oracle |= self.oracle;
        job.train.validate()?;
        job.data.validate()?;
        if job.train.latent_u != job.data.dims.u || job.train.latent_v != job.data.dims.v {
            return Err(Error::Config(format!(
                "train.latent_u/latent_v ({}, {}) must match data.dims.u/v ({}, {})",
                job.train.latent_u, job.train.latent_v, job.data.dims.u, job.data.dims.v
            )));
        }
        Ok((job, inputs))
    }
}

pub fn execute_train(
    job: &TrainJob,
    inputs: Vec<FileDigest>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> CliResult<RunManifest> {
    let draft = ManifestDraft::new("train", job, job.train.seed, inputs)?;
    let data = job.data.build()?;
    std::fs::create_dir_all(out_dir)?;
    let outcome = train(&job.train, &data.train.x, &data.test.x)?;

    let trace_path = out_dir.join("trace.csv");
    write_atomic(&trace_path, &trace_csv_bytes(&outcome.trace)?)?;
    let mut outputs = vec![trace_path];
    if let RunStatus::Aborted { step, message, class } = &outcome.status {
        draft.finish(out_dir, &outputs)?;
        return Err(CliError::Aborted {
            step: *step,
            message: message.clone(),
            class: *class,
        });
    }
    let ck_path = out_dir.join("checkpoint.json");
    write_atomic(&ck_path, outcome.model.to_checkpoint_json(&job.train)?.as_bytes())?;
    outputs.push(ck_path);

    if let Some(last) = outcome.final_record() {
        writeln!(
            out,
            "final step={} test_elbo={} test_elbo_se={} test_hsic={} test_pearson={} penalty={}",
            last.step,
            fmt_sig12(last.test_elbo),
            fmt_sig12(last.test_elbo_se),
            fmt_sig12(last.test_hsic),
            fmt_sig12(last.test_pearson),
            fmt_sig12(last.penalty)
        )?;
    }
    if job.oracle {
        let r = exact_reference(&data, &[job.train.seed])?;
        let path = out_dir.join("oracle.csv");
        let body = format!(
            "test_log_likelihood,test_hsic,test_pearson\n{},{},{}\n",
            fmt_sig12(r.test_log_likelihood),
            fmt_sig12(r.test_hsic),
            fmt_sig12(r.test_pearson)
        );
        write_atomic(&path, body.as_bytes())?;
        outputs.push(path);
        writeln!(
            out,
            "oracle test_log_likelihood={} test_hsic={} test_pearson={}",
            fmt_sig12(r.test_log_likelihood),
            fmt_sig12(r.test_hsic),
            fmt_sig12(r.test_pearson)
        )?;
    }
    draft.finish(out_dir, &outputs)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON file with `base`, `data`, `grid` and `seeds`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use training seeds 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[command(flatten)]
    pub common: CommonTrainFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl SweepArgs {
    pub fn resolve(&self) -> Result<(SweepConfig, Vec<FileDigest>)> {
        let (mut cfg, inputs) = match &self.config {
            Some(p) => (read_json::<SweepConfig>(p)?, vec![input_digest(p)?]),
            None => (SweepConfig::default(), Vec::new()),
        };
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        self.common.apply(&mut cfg.base, &mut cfg.data);
        cfg.validate()?;
        Ok((cfg, inputs))
    }
}

pub fn execute_sweep(
    cfg: &SweepConfig,
    inputs: Vec<FileDigest>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> CliResult<RunManifest> {
    let draft = ManifestDraft::new("sweep", cfg, cfg.seeds[0], inputs)?;
    let data = cfg.data.build()?;
    let result = sweep_on(cfg, &data)?;
    std::fs::create_dir_all(out_dir)?;
    let outputs = result.write_outputs(out_dir)?;
    for a in &result.aggregate {
        writeln!(
            out,
            "{} runs_ok={} runs_failed={} test_elbo={} test_hsic={} test_pearson={}",
            a.objective,
            a.runs_ok,
            a.runs_failed,
            fmt_sig12(a.mean_test_elbo),
            fmt_sig12(a.mean_test_hsic),
            fmt_sig12(a.mean_test_pearson)
        )?;
    }
    let r = &result.reference;
    writeln!(
        out,
        "exact_posterior test_log_likelihood={} test_hsic={} test_pearson={}",
        fmt_sig12(r.test_log_likelihood),
        fmt_sig12(r.test_hsic),
        fmt_sig12(r.test_pearson)
    )?;
    for f in result.failed_runs() {
        if let RunStatus::Aborted { step, message, .. } = &f.outcome.status {
            writeln!(out, "failed {} seed={} step={step}: {message}", f.objective, f.seed)?;
        }
    }
    draft.finish(out_dir, &outputs)
}

// ---------------------------------------------------------------- rerun

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the reproduced outputs; defaults to `rerun/` next to
    /// the manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn rerun(args: &RerunArgs, out: &mut dyn Write) -> CliResult<()> {
    let old = RunManifest::read(&args.manifest)?;
    let out_dir = match &args.out_dir {
        Some(d) => d.clone(),
        None => args
            .manifest
            .parent()
            .map(|p| p.join("rerun"))
            .unwrap_or_else(|| PathBuf::from("rerun")),
    };
    let config_err = |e: serde_json::Error| Error::Config(format!("manifest config: {e}"));
    let new = match old.command.as_str() {
        "gen" => {
            let cfg: GenConfig = serde_json::from_value(old.config.clone()).map_err(config_err)?;
            execute_gen(&cfg, &out_dir, out)?
        }
        "train" => {
            let job: TrainJob = serde_json::from_value(old.config.clone()).map_err(config_err)?;
            execute_train(&job, old.inputs.clone(), &out_dir, out)?
        }
        "sweep" => {
            let cfg: SweepConfig = serde_json::from_value(old.config.clone()).map_err(config_err)?;
            execute_sweep(&cfg, old.inputs.clone(), &out_dir, out)?
        }
        other => return Err(Error::Format(format!("manifest has unknown command {other:?}")).into()),
    };
    let mut mismatched = Vec::new();
    for o in &old.outputs {
        match new.outputs.iter().find(|n| n.path == o.path) {
            Some(n) if n.sha256 == o.sha256 => {}
            _ => mismatched.push(o.path.clone()),
        }
    }
    if mismatched.is_empty() {
        writeln!(out, "reproduced {} outputs in {}", old.outputs.len(), out_dir.display())?;
        Ok(())
    } else {
        Err(CliError::Mismatch(mismatched.join(", ")))
    }
}
