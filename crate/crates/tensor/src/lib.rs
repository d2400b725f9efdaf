//! Dense tensors and a reverse-mode differentiation tape.
//!
//! The engine covers exactly the operators the spikefuse models use:
//! convolutions (standard, transposed, deformable), pooling, group
//! normalization, batched matrix products, softmax, the elementwise
//! nonlinearities, a surrogate-gradient spike function and binary
//! cross-entropy. Values are `f64` throughout.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod gemm;
pub mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, project, GradCheckOptions, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::conv::{conv_output_extent, conv_transpose_output_extent, Padding};
pub use ops::elementwise::sigmoid;
pub use ops::linalg::softmax_tensor;
pub use ops::loss::PROB_CLAMP;
pub use ops::spike::{spike_value, surrogate_window, SpikeForward};
pub use tensor::Tensor;
