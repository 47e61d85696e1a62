//! Reverse-mode differentiation over dense `f64` matrices, plus the layers,
//! losses and optimizer used by the trainer.
//!
//! A [`Graph`] is a single-use tape: build it, call [`Graph::backward`] once,
//! then drop it.
//!
//! ```
//! use hcv_core::diffengine::Graph;
//! use nalgebra::DMatrix;
//!
//! let mut g = Graph::new();
//! let w = g.param(DMatrix::from_row_slice(1, 2, &[2.0, -1.0])).unwrap();
//! let sq = g.square(w).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(w), DMatrix::from_row_slice(1, 2, &[4.0, -2.0]));
//! ```

mod adam;
mod checkpoint;
mod graph;
mod layers;
mod losses;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{NamedArray, ParamSet};
pub use graph::{Gradients, Graph, Var};
pub use layers::{bind_all, forward_mlp, Activation, BoundLayer, DenseLayer};
pub use losses::{
    gaussian_log_density, gaussian_log_density_var, kl_standard_normal,
    reparameterized_gaussian_sample,
};
