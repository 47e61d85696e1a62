use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
}

/// Fully connected layer `y = act(x Wᵀ + b)` applied row-wise to a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    /// `1 × out`.
    pub bias: DMatrix<f64>,
    pub activation: Activation,
}

/// A [`DenseLayer`] whose parameters live on a graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub weights: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: DMatrix<f64>, bias: DMatrix<f64>, activation: Activation) -> Result<Self> {
        if bias.nrows() != 1 || bias.ncols() != weights.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dense layer bias",
                expected: weights.nrows(),
                found: bias.len(),
            });
        }
        ensure_finite(weights.iter().chain(bias.iter()), || "dense layer parameters".into())?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-a..a)),
            bias: DMatrix::zeros(1, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundLayer> {
        Ok(BoundLayer {
            weights: g.param(self.weights.clone())?,
            bias: g.param(self.bias.clone())?,
            activation: self.activation,
        })
    }
}

pub fn bind_all(layers: &[DenseLayer], g: &mut Graph) -> Result<Vec<BoundLayer>> {
    layers.iter().map(|l| l.bind(g)).collect()
}

/// Runs `input` (`batch × in`) through `layers` in order.
pub fn forward_mlp(g: &mut Graph, layers: &[BoundLayer], input: Var) -> Result<Var> {
    let mut h = input;
    for (i, layer) in layers.iter().enumerate() {
        let expected = g.shape(layer.weights).1;
        let found = g.shape(h).1;
        if expected != found {
            return Err(Error::DimensionMismatch {
                context: if i == 0 { "mlp input" } else { "mlp layer chain" },
                expected,
                found,
            });
        }
        let z = g.matmul_t(h, layer.weights)?;
        let z = g.add_row(z, layer.bias)?;
        h = match layer.activation {
            Activation::Identity => z,
            Activation::Tanh => g.tanh(z)?,
            Activation::Softplus => g.softplus(z)?,
        };
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(DMatrix::identity(3, 3), DMatrix::zeros(1, 3), Activation::Identity).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -0.5]);
        let mut g = Graph::new();
        let bound = bind_all(&[layer], &mut g).unwrap();
        let xi = g.input(x.clone()).unwrap();
        let y = forward_mlp(&mut g, &bound, xi).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let layer = DenseLayer::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), Activation::Softplus).unwrap();
        let mut g = Graph::new();
        let bound = bind_all(&[layer], &mut g).unwrap();
        let xi = g.input(DMatrix::from_element(1, 1, 0.7)).unwrap();
        let y = forward_mlp(&mut g, &bound, xi).unwrap();
        assert!((g.scalar(y) - 0.693_147_180_559_945_3).abs() < 1e-15);
    }

    #[test]
    fn two_layer_matches_hand_evaluation() {
        let l1 = DenseLayer::new(
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]),
            DMatrix::from_row_slice(1, 2, &[0.1, -0.2]),
            Activation::Tanh,
        )
        .unwrap();
        let l2 = DenseLayer::new(
            DMatrix::from_row_slice(1, 2, &[3.0, -1.0]),
            DMatrix::from_row_slice(1, 1, &[0.25]),
            Activation::Identity,
        )
        .unwrap();
        let (x0, x1) = (0.3, -0.4);
        let h0 = (x0 - x1 + 0.1f64).tanh();
        let h1 = (0.5 * x0 + 2.0 * x1 - 0.2f64).tanh();
        let expected = 3.0 * h0 - h1 + 0.25;

        let mut g = Graph::new();
        let bound = bind_all(&[l1, l2], &mut g).unwrap();
        let xi = g.input(DMatrix::from_row_slice(1, 2, &[x0, x1])).unwrap();
        let y = forward_mlp(&mut g, &bound, xi).unwrap();
        assert!((g.scalar(y) - expected).abs() < 1e-15);
    }

    #[test]
    fn chain_mismatch_is_an_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let l1 = DenseLayer::glorot(3, 4, Activation::Tanh, &mut rng);
        let l2 = DenseLayer::glorot(5, 1, Activation::Identity, &mut rng);
        let mut g = Graph::new();
        let bound = bind_all(&[l1, l2], &mut g).unwrap();
        let xi = g.input(DMatrix::zeros(2, 3)).unwrap();
        assert!(matches!(
            forward_mlp(&mut g, &bound, xi),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = g.input(DMatrix::zeros(2, 2)).unwrap();
        assert!(forward_mlp(&mut g, &bound[..1], bad).is_err());
    }

    #[test]
    fn bias_shape_is_checked() {
        assert!(DenseLayer::new(DMatrix::zeros(2, 3), DMatrix::zeros(1, 3), Activation::Identity).is_err());
    }
}
