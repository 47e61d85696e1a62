use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::io::DenseArray;

/// One named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    #[serde(flatten)]
    pub array: DenseArray,
}

/// Ordered list of named arrays.
///
/// Layers are stored as `{prefix}.{index}.weights` (`out × in`) followed by
/// `{prefix}.{index}.bias` (`1 × out`), layer by layer in forward order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub arrays: Vec<NamedArray>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, m: &DMatrix<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            array: DenseArray::from_matrix(m),
        });
    }

    pub fn get(&self, name: &str) -> Result<DMatrix<f64>> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no array named {name:?}")))?
            .array
            .to_matrix()
    }

    pub fn push_layers(&mut self, prefix: &str, layers: &[DenseLayer]) {
        for (i, l) in layers.iter().enumerate() {
            self.push(format!("{prefix}.{i}.weights"), &l.weights);
            self.push(format!("{prefix}.{i}.bias"), &l.bias);
        }
    }

    /// Restores layers whose activations are given by `activations`.
    pub fn layers(&self, prefix: &str, activations: &[Activation]) -> Result<Vec<DenseLayer>> {
        activations
            .iter()
            .enumerate()
            .map(|(i, act)| {
                let w = self.get(&format!("{prefix}.{i}.weights"))?;
                let b = self.get(&format!("{prefix}.{i}.bias"))?;
                DenseLayer::new(w, b, *act)
            })
            .collect()
    }
}
