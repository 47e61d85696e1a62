//! Biased V-statistic estimators of HSIC, dHSIC and squared MMD.
//!
//! All estimators work from dense Gram matrices and cost `O(n²)` kernel
//! evaluations per variable. None of them enumerates index tuples: the
//! quartic and higher-order sums are reduced to products of Gram means and
//! row sums.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{gram_matrix, median_gaussian, GramMatrix, KernelSpec};

/// Rounding slack below zero that is silently clamped.
pub const NEGATIVE_SLACK: f64 = 1e-12;

/// `n` joint samples of one random variable together with its kernel.
#[derive(Debug, Clone)]
pub struct SampleBlock {
    data: DMatrix<f64>,
    kernel: KernelSpec,
}

impl SampleBlock {
    pub fn new(data: DMatrix<f64>, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        kernel.check_samples(&data)?;
        Ok(Self { data, kernel })
    }

    /// Gaussian kernel with the median-heuristic bandwidth of `data`.
    pub fn with_median_bandwidth(data: DMatrix<f64>) -> Result<Self> {
        let kernel = median_gaussian(&data)?;
        Self::new(data, kernel)
    }

    /// Integer labels under the Kronecker delta kernel.
    pub fn labels(labels: &[i64]) -> Result<Self> {
        let data = DMatrix::from_iterator(labels.len(), 1, labels.iter().map(|&l| l as f64));
        Self::new(data, KernelSpec::Delta)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn gram(&self) -> Result<GramMatrix> {
        gram_matrix(self.kernel, &self.data)
    }
}

fn clamp_rounding(value: f64, context: &'static str) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite(context.to_string()));
    }
    if value >= 0.0 {
        Ok(value)
    } else if value >= -NEGATIVE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::NegativeStatistic { context, value })
    }
}

fn check_same_n(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Doubly centred Gram matrix `HKH`, entry `K_ij − r_i − r_j + m` with `r`
/// the row means and `m` the grand mean.
pub(crate) fn centered(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (means, grand) = centering_terms(k);
    DMatrix::from_fn(k.nrows(), k.nrows(), |i, j| k[(i, j)] - means[i] - means[j] + grand)
}

fn centering_terms(k: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let nf = k.nrows() as f64;
    let means: Vec<f64> = k.column_iter().map(|c| c.sum() / nf).collect();
    let grand = means.iter().sum::<f64>() / nf;
    (means, grand)
}

/// HSIC V-statistic from precomputed Gram matrices.
///
/// Evaluates `(1/n²) Σ_ij K_ij L_ij + (1/n⁴) Σ K Σ L − (2/n³) Σ_i (Σ_j K_ij)(Σ_k L_ik)`
/// in the equivalent centred form `(1/n²) Σ_ij (HKH)_ij (HLH)_ij`. The
/// centred form is exactly symmetric in its arguments and gives exactly zero
/// for a constant variable.
pub fn hsic_from_grams(k: &GramMatrix, l: &GramMatrix) -> Result<f64> {
    check_same_n("hsic", k.n(), l.n())?;
    let n = k.n();
    if n < 2 {
        return Err(Error::TooFewSamples {
            context: "hsic",
            needed: 2,
            got: n,
        });
    }
    let (km, kg) = centering_terms(k.values());
    let (lm, lg) = centering_terms(l.values());
    let (kv, lv) = (k.values().as_slice(), l.values().as_slice());
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let idx = j * n + i;
            let a = kv[idx] - km[i] - km[j] + kg;
            let b = lv[idx] - lm[i] - lm[j] + lg;
            acc += a * b;
        }
    }
    clamp_rounding(acc / (n * n) as f64, "hsic")
}

/// Biased HSIC estimate between two blocks of joint samples.
pub fn hsic_v_statistic(u: &SampleBlock, v: &SampleBlock) -> Result<f64> {
    check_same_n("hsic", u.n(), v.n())?;
    if u.n() < 2 {
        return Err(Error::TooFewSamples {
            context: "hsic",
            needed: 2,
            got: u.n(),
        });
    }
    hsic_from_grams(&u.gram()?, &v.gram()?)
}

/// dHSIC V-statistic from one Gram matrix per variable.
pub fn dhsic_from_grams(grams: &[GramMatrix]) -> Result<f64> {
    if grams.len() < 2 {
        return Err(Error::TooFewSamples {
            context: "dhsic (variables)",
            needed: 2,
            got: grams.len(),
        });
    }
    let n = grams[0].n();
    for g in &grams[1..] {
        check_same_n("dhsic", n, g.n())?;
    }
    if n < 2 {
        return Err(Error::TooFewSamples {
            context: "dhsic",
            needed: 2,
            got: n,
        });
    }
    let nf = n as f64;

    // (1/n²) Σ_{i1,i2} Π_j k^j(i1, i2)
    let mut joint = grams[0].values().clone();
    for g in &grams[1..] {
        joint.component_mul_assign(g.values());
    }
    let first = joint.sum() / (nf * nf);

    // (1/n^{2d}) Σ over 2d free indices factorises into Π_j mean(K^j).
    let second: f64 = grams.iter().map(|g| g.total() / (nf * nf)).product();

    // (2/n^{d+1}) Σ_{i1} Π_j Σ_{i_{j+1}} k^j(i1, i_{j+1}).
    let mut row_products = vec![1.0; n];
    for g in grams {
        for (acc, s) in row_products.iter_mut().zip(g.row_sums()) {
            *acc *= s / nf;
        }
    }
    let third = 2.0 * row_products.iter().sum::<f64>() / nf;

    clamp_rounding(first + second - third, "dhsic")
}

/// Biased dHSIC estimate for `d ≥ 2` blocks sharing the sample count.
pub fn dhsic_v_statistic(blocks: &[SampleBlock]) -> Result<f64> {
    if blocks.len() < 2 {
        return Err(Error::TooFewSamples {
            context: "dhsic (variables)",
            needed: 2,
            got: blocks.len(),
        });
    }
    let n = blocks[0].n();
    for b in &blocks[1..] {
        check_same_n("dhsic", n, b.n())?;
    }
    let grams = blocks.iter().map(SampleBlock::gram).collect::<Result<Vec<_>>>()?;
    dhsic_from_grams(&grams)
}

/// `Σ_ij k(x_i, y_j)` visiting pairs in row-major order.
fn kernel_sum(spec: KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let xr: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let yr: Vec<Vec<f64>> = y.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut total = 0.0;
    for a in &xr {
        for b in &yr {
            // Both arguments were validated when the blocks were built.
            total += kernel_eval_fast(spec, a, b);
        }
    }
    total
}

#[inline]
fn kernel_eval_fast(spec: KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec {
        KernelSpec::Gaussian { gamma } => {
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            (-gamma * d2).exp()
        }
        KernelSpec::Delta => f64::from(u8::from(a == b)),
    }
}

/// Squared-MMD V-statistic between two samples under a shared kernel.
pub fn mmd_v_statistic(x: &SampleBlock, y: &SampleBlock) -> Result<f64> {
    if x.kernel != y.kernel {
        return Err(Error::KernelMismatch(format!(
            "{:?} vs {:?}",
            x.kernel, y.kernel
        )));
    }
    if x.data.ncols() != y.data.ncols() {
        return Err(Error::DimensionMismatch {
            context: "mmd (columns)",
            expected: x.data.ncols(),
            found: y.data.ncols(),
        });
    }
    for (block, name) in [(x, "mmd (first sample)"), (y, "mmd (second sample)")] {
        if block.n() == 0 {
            return Err(Error::TooFewSamples {
                context: name,
                needed: 1,
                got: 0,
            });
        }
    }
    Ok(mmd_unchecked(x.kernel, &x.data, &y.data))
}

fn mmd_unchecked(spec: KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let nx = x.nrows() as f64;
    let ny = y.nrows() as f64;
    let sxx = kernel_sum(spec, x, x);
    let syy = kernel_sum(spec, y, y);
    let sxy = kernel_sum(spec, x, y);
    let raw = sxx / (nx * nx) + syy / (ny * ny) - 2.0 * sxy / (nx * ny);
    // A squared RKHS distance; only rounding can push it below zero.
    raw.max(0.0)
}

/// Weight of the pair `(a, b)` in the MMD decomposition of a delta-kernel HSIC.
///
/// With class sizes `n_c`, total `M` and `Q = Σ_c n_c²`, the weight is
/// `n_a n_b (M (n_a + n_b) − Q) / M⁴`; for two classes it reduces to
/// `2 n_a² n_b² / M⁴`.
pub fn pair_weight(n_a: usize, n_b: usize, total: usize, sum_sq_sizes: f64) -> f64 {
    let (na, nb, m) = (n_a as f64, n_b as f64, total as f64);
    na * nb * (m * (na + nb) - sum_sq_sizes) / m.powi(4)
}

/// Sum over unordered label pairs of weighted squared MMDs between the
/// class-conditional samples of `z`.
///
/// Equals `hsic_v_statistic(z, labels)` when the labels use the delta kernel.
pub fn weighted_mmd_sum(z: &SampleBlock, labels: &[i64]) -> Result<f64> {
    weighted_mmd_sum_with_classes(z, labels, None)
}

/// As [`weighted_mmd_sum`], additionally requiring every class listed in
/// `declared` to be present.
pub fn weighted_mmd_sum_with_classes(
    z: &SampleBlock,
    labels: &[i64],
    declared: Option<&[i64]>,
) -> Result<f64> {
    check_same_n("weighted_mmd_sum", z.n(), labels.len())?;
    let mut classes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if let Some(declared) = declared {
        if let Some(&missing) = declared.iter().find(|c| !classes.contains_key(c)) {
            return Err(Error::EmptyClass(missing));
        }
    }
    let total = labels.len();
    let sum_sq: f64 = classes.values().map(|m| (m.len() * m.len()) as f64).sum();
    let members: Vec<(usize, DMatrix<f64>)> = classes
        .values()
        .map(|idx| (idx.len(), z.data.select_rows(idx)))
        .collect();

    let mut acc = 0.0;
    for a in 0..members.len() {
        for b in (a + 1)..members.len() {
            let (na, xa) = &members[a];
            let (nb, xb) = &members[b];
            let w = pair_weight(*na, *nb, total, sum_sq);
            acc += w * mmd_unchecked(z.kernel, xa, xb);
        }
    }
    clamp_rounding(acc, "weighted_mmd_sum")
}

fn column_moments(m: &DMatrix<f64>, context: &'static str) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = m.nrows() as f64;
    m.column_iter()
        .enumerate()
        .map(|(j, c)| {
            let mean = c.sum() / n;
            let centred: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let ss: f64 = centred.iter().map(|x| x * x).sum();
            if ss <= 0.0 {
                return Err(Error::ZeroVariance { context, column: j });
            }
            Ok((centred, ss.sqrt()))
        })
        .collect()
}

/// `Σ_{i,j} |ρ(u_i, v_j)|` over all column pairs of `u` and `v`.
pub fn pearson_correlation_sum(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check_same_n("pearson_correlation_sum", u.nrows(), v.nrows())?;
    if u.nrows() < 2 {
        return Err(Error::TooFewSamples {
            context: "pearson_correlation_sum",
            needed: 2,
            got: u.nrows(),
        });
    }
    ensure_finite(u.iter().chain(v.iter()), || "pearson input".to_string())?;
    let cu = column_moments(u, "pearson (first)")?;
    let cv = column_moments(v, "pearson (second)")?;
    let mut total = 0.0;
    for (a, sa) in &cu {
        for (b, sb) in &cv {
            let cov: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            total += (cov / (sa * sb)).abs();
        }
    }
    Ok(total)
}

/// Observed HSIC and its permutation null distribution.
#[derive(Debug, Clone)]
pub struct PermutationNull {
    pub statistic: f64,
    pub null: Vec<f64>,
}

impl PermutationNull {
    /// `(1 + #{null ≥ observed}) / (1 + permutations)`.
    pub fn p_value(&self) -> f64 {
        let exceed = self.null.iter().filter(|&&s| s >= self.statistic).count();
        (1 + exceed) as f64 / (1 + self.null.len()) as f64
    }

    /// Empirical quantile of the null (nearest-rank, `q` in `[0, 1]`).
    pub fn null_quantile(&self, q: f64) -> f64 {
        let mut sorted = self.null.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }
}

pub const MIN_PERMUTATION_SAMPLES: usize = 8;
pub const MIN_PERMUTATIONS: usize = 99;

/// Permutes the rows of `v` `n_permutations` times and recomputes HSIC.
///
/// Replicate `r` draws its permutation from the ChaCha stream `r + 1` of
/// `seed`, so the result does not depend on thread scheduling.
pub fn permutation_null(
    u: &SampleBlock,
    v: &SampleBlock,
    n_permutations: usize,
    seed: u64,
) -> Result<PermutationNull> {
    check_same_n("permutation_test", u.n(), v.n())?;
    let n = u.n();
    if n < MIN_PERMUTATION_SAMPLES {
        return Err(Error::TooFewSamples {
            context: "permutation_test",
            needed: MIN_PERMUTATION_SAMPLES,
            got: n,
        });
    }
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "permutation test needs at least {MIN_PERMUTATIONS} permutations, got {n_permutations}"
        )));
    }
    let k = u.gram()?;
    let l = v.gram()?;
    let statistic = hsic_from_grams(&k, &l)?;
    let kc = centered(k.values());
    let lv = centered(l.values());
    let scale = (n * n) as f64;

    let null = (0..n_permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut acc = 0.0;
            for j in 0..n {
                let pj = perm[j];
                for i in 0..n {
                    acc += kc[(i, j)] * lv[(perm[i], pj)];
                }
            }
            (acc / scale).max(0.0)
        })
        .collect();
    Ok(PermutationNull { statistic, null })
}

/// Permutation p-value of the HSIC independence test.
pub fn permutation_test(
    u: &SampleBlock,
    v: &SampleBlock,
    n_permutations: usize,
    seed: u64,
) -> Result<f64> {
    Ok(permutation_null(u, v, n_permutations, seed)?.p_value())
}
