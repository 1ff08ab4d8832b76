//! Minimal dense tensors with reverse-mode autodiff, the layers the encoder,
//! decoder and forward models need, and Adam.

mod adam;
pub mod conv;
mod gradcheck;
mod graph;
mod init;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use init::glorot_uniform;
pub use params::{Param, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Leaky ReLU slope used throughout the models.
pub const LEAKY_SLOPE: f64 = 0.01;
