//! Dense tensors, reverse-mode autodiff and the primitive layers built on it.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod gru;
pub mod init;
pub mod ops;
mod param;
mod tensor;

pub use adam::AdamState;
pub use graph::{Graph, Var};
pub use gru::{gru_cell, GruParams};
pub use init::{xavier_init, xavier_init_with};
pub use ops::{conv2d, global_avg_pool, max_pool2d, softmax};
pub use param::{clip_gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Gradient clipping range applied before every optimizer step.
pub const GRAD_CLIP: (f64, f64) = (-5.0, 5.0);
