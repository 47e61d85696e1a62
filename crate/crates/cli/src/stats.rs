use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hcv_core::independence::{
    dhsic_v_statistic, hsic_v_statistic, mmd_v_statistic, permutation_null, weighted_mmd_sum, SampleBlock,
};
use hcv_core::io::fmt_sig12;
use hcv_core::kernels::{median_heuristic, KernelSpec};
use hcv_core::{Error, Result};
use nalgebra::DMatrix;

use crate::table::NumericTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Gaussian,
    Delta,
}

fn block(data: DMatrix<f64>, kind: KernelKind, gamma: Option<f64>) -> Result<SampleBlock> {
    match (kind, gamma) {
        (KernelKind::Delta, None) => SampleBlock::new(data, KernelSpec::Delta),
        (KernelKind::Delta, Some(_)) => Err(Error::Config("--gamma does not apply to the delta kernel".into())),
        (KernelKind::Gaussian, None) => SampleBlock::with_median_bandwidth(data),
        (KernelKind::Gaussian, Some(g)) => SampleBlock::new(data, KernelSpec::gaussian(g)?),
    }
}

#[derive(Debug, Args)]
pub struct HsicArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Columns of U: names, 0-based indices or `prefix*`, comma separated.
    #[arg(long)]
    pub u: String,
    /// Columns of V.
    #[arg(long)]
    pub v: String,
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    pub kernel_u: KernelKind,
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    pub kernel_v: KernelKind,
    /// Gaussian bandwidth for U; median heuristic when omitted.
    #[arg(long)]
    pub gamma_u: Option<f64>,
    /// Gaussian bandwidth for V; median heuristic when omitted.
    #[arg(long)]
    pub gamma_v: Option<f64>,
    /// Number of permutations for a p-value.
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn hsic(args: &HsicArgs, out: &mut dyn Write) -> Result<()> {
    let table = NumericTable::read(&args.input)?;
    let u = block(table.select(&args.u)?, args.kernel_u, args.gamma_u)?;
    let v = block(table.select(&args.v)?, args.kernel_v, args.gamma_v)?;
    match args.permutations {
        None => writeln!(out, "hsic {}", fmt_sig12(hsic_v_statistic(&u, &v)?))?,
        Some(n) => {
            let null = permutation_null(&u, &v, n, args.seed)?;
            writeln!(out, "hsic {}", fmt_sig12(null.statistic))?;
            writeln!(out, "p_value {}", fmt_sig12(null.p_value()))?;
            writeln!(out, "permutations {n}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DhsicArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Columns of one variable; repeat for each variable (at least two).
    #[arg(long = "group", required = true)]
    pub groups: Vec<String>,
    /// Shared Gaussian bandwidth; median heuristic per group when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
}

pub fn dhsic(args: &DhsicArgs, out: &mut dyn Write) -> Result<()> {
    if args.groups.len() < 2 {
        return Err(Error::Config("dhsic needs at least two --group options".into()));
    }
    let table = NumericTable::read(&args.input)?;
    let blocks = args
        .groups
        .iter()
        .map(|g| block(table.select(g)?, KernelKind::Gaussian, args.gamma))
        .collect::<Result<Vec<_>>>()?;
    writeln!(out, "dhsic {}", fmt_sig12(dhsic_v_statistic(&blocks)?))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct MmdArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Sample columns.
    #[arg(long)]
    pub columns: String,
    /// Integer label column splitting the rows into samples.
    #[arg(long, conflicts_with = "split_half")]
    pub label: Option<String>,
    /// Compare the first half of the rows with the second half.
    #[arg(long)]
    pub split_half: bool,
    /// Gaussian bandwidth; median heuristic on all selected rows when omitted.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Print the class-size weighted sum of pairwise MMDs over all labels,
    /// which equals HSIC against the labels under a delta kernel.
    #[arg(long, requires = "label")]
    pub weighted_sum: bool,
}

pub fn mmd(args: &MmdArgs, out: &mut dyn Write) -> Result<()> {
    let table = NumericTable::read(&args.input)?;
    let z = table.select(&args.columns)?;
    let gamma = match args.gamma {
        Some(g) => g,
        None => median_heuristic(&z)?,
    };
    let kernel = KernelSpec::gaussian(gamma)?;
    if args.weighted_sum {
        let labels = table.labels(args.label.as_deref().expect("clap enforces --label"))?;
        let value = weighted_mmd_sum(&SampleBlock::new(z, kernel)?, &labels)?;
        writeln!(out, "weighted_mmd_sum {}", fmt_sig12(value))?;
        return Ok(());
    }
    let (x, y) = if args.split_half {
        let half = z.nrows() / 2;
        if half == 0 {
            return Err(Error::TooFewSamples {
                context: "mmd split",
                needed: 2,
                got: z.nrows(),
            });
        }
        (z.rows(0, half).into_owned(), z.rows(half, z.nrows() - half).into_owned())
    } else {
        let Some(label) = &args.label else {
            return Err(Error::Config("mmd needs --label or --split-half".into()));
        };
        let labels = table.labels(label)?;
        let mut classes = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() != 2 {
            return Err(Error::Config(format!(
                "--label must split the rows into exactly two classes, found {}; use --weighted-sum for more",
                classes.len()
            )));
        }
        let pick = |c: i64| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            z.select_rows(&idx)
        };
        (pick(classes[0]), pick(classes[1]))
    };
    let value = mmd_v_statistic(&SampleBlock::new(x, kernel)?, &SampleBlock::new(y, kernel)?)?;
    writeln!(out, "mmd {}", fmt_sig12(value))?;
    Ok(())
}
