use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataConfig, ExperimentData, Objective, TrainConfig};
use super::train::{trace_csv_bytes, trace_fields, train, RunStatus, TraceRecord, TrainOutcome, TRACE_HEADER};
use crate::error::{Error, Result};
use crate::independence::{hsic_v_statistic, pearson_correlation_sum, SampleBlock};
use crate::io::{csv_writer, fmt_sig12, write_atomic};

/// VAE, β-VAE at β ∈ {2, 4, 8} and HCV at λ ∈ {0.1, 1, 10, 100}.
pub fn default_grid() -> Vec<Objective> {
    let mut grid = vec![Objective::Vae];
    grid.extend([2.0, 4.0, 8.0].map(|beta| Objective::BetaVae { beta }));
    grid.extend([0.1, 1.0, 10.0, 100.0].map(|lambda| Objective::Hcv { lambda }));
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Settings shared by every run; `objective` and `seed` are replaced per run.
    pub base: TrainConfig,
    pub data: DataConfig,
    pub grid: Vec<Objective>,
    /// Training seeds; the dataset is the same for every run.
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            data: DataConfig::default(),
            grid: default_grid(),
            seeds: (0..5).collect(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("grid: must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must not be empty".into()));
        }
        self.data.validate()?;
        for objective in &self.grid {
            self.run_config(*objective, 0).validate()?;
        }
        Ok(())
    }

    pub fn run_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            seed,
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub objective: Objective,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

impl RunResult {
    pub fn trace_file_name(&self) -> String {
        match self.objective.weight() {
            None => format!("{}_seed{}.csv", self.objective.label(), self.seed),
            Some(w) => format!("{}_{}_seed{}.csv", self.objective.label(), w, self.seed),
        }
    }
}

/// Seed-averaged final metrics of one grid point, over completed runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub objective: Objective,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub mean_train_elbo: f64,
    pub mean_test_elbo: f64,
    pub mean_test_hsic: f64,
    pub mean_test_pearson: f64,
}

/// Metrics of the exact posterior on the test rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactReference {
    /// Mean exact marginal log-likelihood of the test rows.
    pub test_log_likelihood: f64,
    /// HSIC between `u` and `v` of one exact-posterior sample per test row,
    /// averaged over the sweep seeds.
    pub test_hsic: f64,
    /// Summed absolute Pearson correlation of the exact posterior means.
    pub test_pearson: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub runs: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
    pub reference: ExactReference,
}

const REFERENCE_STREAM: u64 = 4;

/// Exact-posterior baselines, one posterior draw per test row and seed.
pub fn exact_reference(data: &ExperimentData, seeds: &[u64]) -> Result<ExactReference> {
    if seeds.is_empty() {
        return Err(Error::Config("seeds: must not be empty".into()));
    }
    let posterior = data.model.exact_posterior()?;
    let x = &data.test.x;
    let test_log_likelihood = data.model.marginal_log_likelihood(x)?;
    let mut hsic = 0.0;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(REFERENCE_STREAM);
        let (v, u) = posterior.sample_rows(x, &mut rng)?;
        hsic += hsic_v_statistic(
            &SampleBlock::with_median_bandwidth(u)?,
            &SampleBlock::with_median_bandwidth(v)?,
        )?;
    }
    let means = posterior.means(x)?;
    let layout = posterior.layout();
    let mean_v = means.columns(layout.v_range().start, layout.v).into_owned();
    let mean_u = means.columns(layout.u_range().start, layout.u).into_owned();
    Ok(ExactReference {
        test_log_likelihood,
        test_hsic: hsic / seeds.len() as f64,
        test_pearson: pearson_correlation_sum(&mean_u, &mean_v)?,
    })
}

fn aggregate(grid: &[Objective], runs: &[RunResult]) -> Vec<AggregateRow> {
    grid.iter()
        .map(|objective| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.objective == *objective).collect();
            let done: Vec<&TraceRecord> = mine
                .iter()
                .filter(|r| r.outcome.is_completed())
                .filter_map(|r| r.outcome.final_record())
                .collect();
            let k = done.len() as f64;
            let mean = |f: fn(&TraceRecord) -> f64| {
                if done.is_empty() {
                    f64::NAN
                } else {
                    done.iter().map(|r| f(r)).sum::<f64>() / k
                }
            };
            AggregateRow {
                objective: *objective,
                runs_ok: done.len(),
                runs_failed: mine.len() - done.len(),
                mean_train_elbo: mean(|r| r.train_elbo),
                mean_test_elbo: mean(|r| r.test_elbo),
                mean_test_hsic: mean(|r| r.test_hsic),
                mean_test_pearson: mean(|r| r.test_pearson),
            }
        })
        .collect()
}

/// Trains every grid point under every seed on `data`, in parallel.
pub fn sweep_on(config: &SweepConfig, data: &ExperimentData) -> Result<SweepResult> {
    config.validate()?;
    let jobs: Vec<(Objective, u64)> = config
        .grid
        .iter()
        .flat_map(|o| config.seeds.iter().map(move |s| (*o, *s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(objective, seed)| {
            let outcome = train(&config.run_config(objective, seed), &data.train.x, &data.test.x)?;
            Ok(RunResult {
                objective,
                seed,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = exact_reference(data, &config.seeds)?;
    Ok(SweepResult {
        aggregate: aggregate(&config.grid, &runs),
        runs,
        reference,
    })
}

/// Builds the dataset described by `config.data` and runs [`sweep_on`].
pub fn sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let data = config.data.build()?;
    sweep_on(config, &data)
}

fn weight_field(o: &Objective) -> String {
    o.weight().map(|w| w.to_string()).unwrap_or_default()
}

impl SweepResult {
    /// `runs.csv`: one row per (objective, weight, seed) with its final
    /// record; failed runs carry their last record, if any.
    pub fn runs_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            let mut header = vec!["objective", "weight", "seed", "status"];
            header.extend(TRACE_HEADER);
            w.write_record(&header)?;
            for r in &self.runs {
                let status = match &r.outcome.status {
                    RunStatus::Completed => "completed",
                    RunStatus::Aborted { .. } => "aborted",
                };
                let mut row = vec![
                    r.objective.label().to_string(),
                    weight_field(&r.objective),
                    r.seed.to_string(),
                    status.to_string(),
                ];
                match r.outcome.final_record() {
                    Some(rec) => row.extend(trace_fields(rec)),
                    None => row.extend(std::iter::repeat_n(String::new(), TRACE_HEADER.len())),
                }
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    /// `aggregate.csv`: one row per grid point, then an `exact_posterior`
    /// row whose `mean_test_elbo` is the exact test log-likelihood.
    pub fn aggregate_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            w.write_record([
                "objective",
                "weight",
                "runs_ok",
                "runs_failed",
                "mean_train_elbo",
                "mean_test_elbo",
                "mean_test_hsic",
                "mean_test_pearson",
            ])?;
            for a in &self.aggregate {
                w.write_record([
                    a.objective.label().to_string(),
                    weight_field(&a.objective),
                    a.runs_ok.to_string(),
                    a.runs_failed.to_string(),
                    fmt_sig12(a.mean_train_elbo),
                    fmt_sig12(a.mean_test_elbo),
                    fmt_sig12(a.mean_test_hsic),
                    fmt_sig12(a.mean_test_pearson),
                ])?;
            }
            let r = &self.reference;
            w.write_record([
                "exact_posterior".to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                fmt_sig12(r.test_log_likelihood),
                fmt_sig12(r.test_hsic),
                fmt_sig12(r.test_pearson),
            ])?;
            w.flush()?;
        }
        Ok(buf)
    }

    /// Writes `runs.csv`, `aggregate.csv` and `traces/<run>.csv` under `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        let mut written = Vec::new();
        for r in &self.runs {
            let path = traces.join(r.trace_file_name());
            write_atomic(&path, &trace_csv_bytes(&r.outcome.trace)?)?;
            written.push(path);
        }
        let runs = dir.join("runs.csv");
        write_atomic(&runs, &self.runs_csv()?)?;
        written.push(runs);
        let agg = dir.join("aggregate.csv");
        write_atomic(&agg, &self.aggregate_csv()?)?;
        written.push(agg);
        Ok(written)
    }

    pub fn failed_runs(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(|r| !r.outcome.is_completed())
    }
}
