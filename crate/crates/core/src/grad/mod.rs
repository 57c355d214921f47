//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Values are recorded as
//! nodes in evaluation order; [`Tape::backward`] replays the local gradient
//! rules in reverse. Complex quantities are carried as separate real and
//! imaginary tensors.

mod broadcast;
mod check;
mod conv;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: numeric domain violation ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("slice {start}..{end} out of range for extent {extent}")]
    Slice {
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl GradError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        GradError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests;
