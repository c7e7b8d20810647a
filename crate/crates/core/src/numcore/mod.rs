//! Dense kernels, the gradient tape, the ridge solver, and the optimizer.

mod matrix;
mod optim;
mod solve;
pub mod tape;

pub use matrix::{frobenius_norm, matmul, row_softmax, Matrix};
pub use optim::{OptimizerConfig, OptimizerState, ParamStore, ParamTensor};
pub use solve::{solve_ridge, symmetric_eigen};
pub use tape::{neg_log_sigmoid, sigmoid, Csr, Tape, Var, FROB_GUARD, SIGMOID_CLAMP};
