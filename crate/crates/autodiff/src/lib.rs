//! Dense f64 tensors with tape-based reverse-mode differentiation, sized for
//! small convolutional networks trained on the CPU.
//!
//! ```
//! use cuedepth_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
mod error;
mod graph;
pub mod io;
mod kernels;
mod optim;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Binary, Gradients, Graph, Reduction, Unary, Var};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use tensor::Tensor;
