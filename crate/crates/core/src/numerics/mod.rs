//! Dense 64-bit tensor arithmetic with a recording tape for reverse-mode
//! gradients, a parameter registry that realizes weight sharing, and Adam.
//!
//! Trainable tensors live in a [`ParamStore`] and are referenced by
//! [`ParamId`]. Two layers that hold the same id read the same buffer and
//! their gradient contributions are summed into one slot by the tape.

mod adam;
pub(crate) mod kernels;
mod registry;
mod tape;
mod tensor;

pub use adam::Adam;
pub use registry::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Layer-norm stabilizer added to the variance under the square root.
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for {bound} rows")]
    Index { index: usize, bound: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-place log-softmax.
pub fn log_softmax_in_place(xs: &mut [f64]) {
    let lse = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= lse;
    }
}
