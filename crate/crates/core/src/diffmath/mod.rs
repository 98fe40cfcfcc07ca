//! Reverse-mode automatic differentiation over small dense tensors, plus the
//! numeric primitives the rest of the crate builds on.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{cross_entropy_seq, Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{ParamSet, Parameterized};
pub use tensor::{argmax, softmax_temp, Tensor};
