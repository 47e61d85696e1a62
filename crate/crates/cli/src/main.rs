//! `hcv`: independence statistics, the linear-Gaussian testbed and the
//! variational trainer from the command line.

mod error;
mod lingauss_cmd;
mod manifest;
mod run;
mod stats;
mod table;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliResult;
use lingauss_cmd::LingaussCommand;

#[derive(Debug, Parser)]
#[command(name = "hcv", version, about = "Kernel independence statistics and HSIC-constrained VAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// HSIC between two column groups of a CSV file.
    Hsic(stats::HsicArgs),
    /// dHSIC among two or more column groups.
    Dhsic(stats::DhsicArgs),
    /// MMD between two samples.
    Mmd(stats::MmdArgs),
    /// The linear-Gaussian generative model.
    #[command(subcommand)]
    Lingauss(LingaussCommand),
    /// Train one model; writes trace.csv, checkpoint.json and manifest.json.
    Train(run::TrainArgs),
    /// Train a grid of objectives over several seeds.
    Sweep(run::SweepArgs),
    /// Re-execute a run from its manifest and verify the outputs match.
    Rerun(run::RerunArgs),
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Hsic(a) => stats::hsic(&a, out)?,
        Command::Dhsic(a) => stats::dhsic(&a, out)?,
        Command::Mmd(a) => stats::mmd(&a, out)?,
        Command::Lingauss(LingaussCommand::Gen(a)) => {
            run::execute_gen(&a.config(), &a.out_dir, out)?;
        }
        Command::Lingauss(LingaussCommand::Loglik(a)) => lingauss_cmd::loglik(&a, out)?,
        Command::Lingauss(LingaussCommand::Posterior(a)) => lingauss_cmd::posterior(&a, out)?,
        Command::Lingauss(LingaussCommand::Gap(a)) => lingauss_cmd::gap(&a, out)?,
        Command::Train(a) => {
            let (job, inputs) = a.resolve()?;
            run::execute_train(&job, inputs, &a.out_dir, out)?;
        }
        Command::Sweep(a) => {
            let (cfg, inputs) = a.resolve()?;
            run::execute_sweep(&cfg, inputs, &a.out_dir, out)?;
        }
        Command::Rerun(a) => run::rerun(&a, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
