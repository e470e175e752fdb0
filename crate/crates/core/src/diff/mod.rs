//! Reverse-mode differentiation over dense `f64` matrices.

mod check;
mod tape;
mod tensor;

pub use check::{eval, grad_check};
pub use tape::{value_and_grad, Gradients, Tape, Var, EPS_NORM};
pub use tensor::{matmul, matmul_nt, Tensor};

pub(crate) use tape::argmax;
pub(crate) use tensor::{gemm, norm};
