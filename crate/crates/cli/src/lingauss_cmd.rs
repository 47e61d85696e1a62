use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use hcv_core::io::fmt_sig12;
use hcv_core::lingauss::io::{read_dataset, read_model};
use hcv_core::trainer::{evaluate_gap, VariationalModel};
use hcv_core::Result;
use nalgebra::DMatrix;

use crate::run::GenArgs;

#[derive(Debug, Subcommand)]
pub enum LingaussCommand {
    /// Draw a model and a dataset; writes model.json, data.csv and a manifest.
    Gen(GenArgs),
    /// Print the exact mean per-row marginal log-likelihood of a dataset.
    Loglik(LoglikArgs),
    /// Print the posterior gain H and covariance Σ, latents ordered (v, u).
    Posterior(PosteriorArgs),
    /// Decompose the variational gap of a trained encoder.
    Gap(GapArgs),
}

#[derive(Debug, Args)]
pub struct LoglikArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also print one value per row.
    #[arg(long)]
    pub per_row: bool,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `hcv train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

fn write_matrix(out: &mut dyn Write, name: &str, m: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols())?;
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| fmt_sig12(*v)).collect();
        writeln!(out, "{}", fields.join(" "))?;
    }
    Ok(())
}

pub fn loglik(args: &LoglikArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&args.model)?;
    let data = read_dataset(&args.data)?;
    let values = model.marginal_log_densities(&data.x)?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    writeln!(out, "loglik {}", fmt_sig12(mean))?;
    if args.per_row {
        for v in values {
            writeln!(out, "{}", fmt_sig12(v))?;
        }
    }
    Ok(())
}

pub fn posterior(args: &PosteriorArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&args.model)?;
    let p = model.exact_posterior()?;
    write_matrix(out, "gain", p.gain())?;
    write_matrix(out, "covariance", p.covariance())?;
    Ok(())
}

pub fn gap(args: &GapArgs, out: &mut dyn Write) -> Result<()> {
    let model = read_model(&args.model)?;
    let data = read_dataset(&args.data)?;
    let (encoder, _) = VariationalModel::from_checkpoint_json(&std::fs::read_to_string(&args.checkpoint)?)?;
    let g = evaluate_gap(&encoder, &data.x, &model)?;
    writeln!(out, "total_gap {}", fmt_sig12(g.total_gap))?;
    writeln!(out, "marginal_kl_sum {}", fmt_sig12(g.marginal_kl_sum))?;
    writeln!(out, "coupling_term {}", fmt_sig12(g.coupling_term))?;
    Ok(())
}
