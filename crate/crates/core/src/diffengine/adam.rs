use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (DMatrix::zeros(p.nrows(), p.ncols()), DMatrix::zeros(p.nrows(), p.ncols())))
            .unzip();
        Self { config, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam step that decreases the loss whose gradient is
/// `grads`.
pub fn adam_step(params: &mut [&mut DMatrix<f64>], grads: &[DMatrix<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            context: "adam parameter count",
            expected: state.m.len(),
            found: params.len().min(grads.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != m.shape() || g.shape() != m.shape() {
            return Err(Error::DimensionMismatch {
                context: "adam parameter shape",
                expected: m.len(),
                found: g.len(),
            });
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = DMatrix::from_row_slice(1, 2, &[1.5, -2.0]);
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[DMatrix::zeros(1, 2)], &mut state).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig::with_lr(0.1);
        let g = 0.3;
        let mut p = DMatrix::from_element(1, 1, 1.0);
        let mut state = AdamState::new(cfg, [&p]);
        adam_step(&mut [&mut p], &[DMatrix::from_element(1, 1, g)], &mut state).unwrap();
        // m̂ = g, v̂ = g² after bias correction.
        let expected = 1.0 - 0.1 * g / (g.abs() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_gives_lr_sized_steps() {
        let mut p = DMatrix::from_element(1, 1, 0.0);
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), [&p]);
        let g = DMatrix::from_element(1, 1, -5.0);
        let mut prev = p[0];
        for _ in 0..100 {
            adam_step(&mut [&mut p], &[g.clone()], &mut state).unwrap();
            assert!(((p[0] - prev) - 0.01).abs() < 1e-8);
            prev = p[0];
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), [&p]);
        for _ in 0..2000 {
            let grad = &p * 2.0;
            adam_step(&mut [&mut p], &[grad], &mut state).unwrap();
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3), "{p}");
    }

    #[test]
    fn shape_checks() {
        let mut p = DMatrix::zeros(2, 2);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam_step(&mut [&mut p], &[DMatrix::zeros(2, 1)], &mut state).is_err());
        assert!(adam_step(&mut [&mut p], &[], &mut state).is_err());
        assert!(AdamConfig::with_lr(-1.0).validate().is_err());
    }
}
