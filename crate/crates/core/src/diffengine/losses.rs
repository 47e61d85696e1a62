use nalgebra::DMatrix;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_same(g: &Graph, context: &'static str, a: Var, b: (usize, usize)) -> Result<()> {
    let s = g.shape(a);
    if s != b {
        return Err(Error::DimensionMismatch {
            context,
            expected: b.0 * b.1,
            found: s.0 * s.1,
        });
    }
    Ok(())
}

/// `mu + exp(log_var / 2) ⊙ noise`. The noise is supplied by the caller.
pub fn reparameterized_gaussian_sample(
    g: &mut Graph,
    mu: Var,
    log_var: Var,
    noise: &DMatrix<f64>,
) -> Result<Var> {
    check_same(g, "reparameterized sample log_var", log_var, g.shape(mu))?;
    check_same(g, "reparameterized sample noise", mu, noise.shape())?;
    let half = g.scale(log_var, 0.5)?;
    let std = g.exp(half)?;
    let eps = g.input(noise.clone())?;
    let spread = g.mul(std, eps)?;
    g.add(mu, spread)
}

/// Sum over rows and columns of `log N(x; mu, diag(exp(log_var)))`.
pub fn gaussian_log_density(g: &mut Graph, x: &DMatrix<f64>, mu: Var, log_var: Var) -> Result<Var> {
    let xv = g.input(x.clone())?;
    gaussian_log_density_var(g, xv, mu, log_var)
}

/// As [`gaussian_log_density`] with `x` already on the graph.
pub fn gaussian_log_density_var(g: &mut Graph, x: Var, mu: Var, log_var: Var) -> Result<Var> {
    let shape = g.shape(mu);
    check_same(g, "gaussian log density x", x, shape)?;
    check_same(g, "gaussian log density log_var", log_var, shape)?;
    let diff = g.sub(x, mu)?;
    let sq = g.square(diff)?;
    let neg = g.scale(log_var, -1.0)?;
    let precision = g.exp(neg)?;
    let quad = g.mul(sq, precision)?;
    let quad = g.sum(quad)?;
    let logdet = g.sum(log_var)?;
    let total = g.add(quad, logdet)?;
    let total = g.scale(total, -0.5)?;
    g.offset(total, -0.5 * LN_2PI * (shape.0 * shape.1) as f64)
}

/// Sum of `KL(N(mu, diag(exp(log_var))) ‖ N(0, I))` over rows.
pub fn kl_standard_normal(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    check_same(g, "kl log_var", log_var, g.shape(mu))?;
    let var = g.exp(log_var)?;
    let m2 = g.square(mu)?;
    let t = g.add(var, m2)?;
    let t = g.sub(t, log_var)?;
    let t = g.offset(t, -1.0)?;
    let s = g.sum(t)?;
    g.scale(s, 0.5)
}
