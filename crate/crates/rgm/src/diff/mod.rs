//! Minimal reverse-mode autodiff: a dense 2-D tensor, a linear tape of
//! primitive operations, a finite-difference gradient checker, and an SGD
//! parameter store with a versioned weights file format.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, DEFAULT_EPS, GRAD_TOL};
pub use params::{manifest_path, Params, TapeBinding, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
