//! Dense numeric substrate: tensors, stable softmax / log-sum-exp, the
//! primitive forward/backward pairs, the LSTM cell, and the
//! finite-difference gradient checker used by every other module's tests.

pub mod gradcheck;
pub mod lstm;
pub mod ops;
mod tensor;

pub use gradcheck::{grad_check, rel_err};
pub use tensor::Tensor;
