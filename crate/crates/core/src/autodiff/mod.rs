//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Every operation on a tracked [`Tensor`] appends a node to its
//! [`GradRecord`]. [`grad`] replays the record backwards from a scalar loss.
//! The adjoint rules are written with the same tensor operations, so with
//! `create_graph` the gradients are recorded too and can be differentiated
//! again, which is what differentiating through an inner gradient step needs.
//!
//! ```
//! use nmrl::autodiff::{grad, Array, GradRecord};
//!
//! let record = GradRecord::new();
//! let x = record.var(Array::vector(vec![1.0, 2.0]));
//! let y = x.mul(&x).unwrap().mul(&x).unwrap().sum(); // Σ x³
//! let g = grad(&y, &[&x], true).unwrap();
//! assert_eq!(g[0].value().data(), &[3.0, 12.0]);
//! let h = grad(&g[0].sum(), &[&x], false).unwrap(); // Σ 6x
//! assert_eq!(h[0].value().data(), &[6.0, 12.0]);
//! ```

mod array;
mod backward;
mod tensor;

use thiserror::Error;

pub use array::Array;
pub use backward::grad;
pub use tensor::{GradRecord, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    Storage { shape: Vec<usize>, len: usize },
    #[error("index out of range in {op} on shape {shape:?}")]
    Index { op: &'static str, shape: Vec<usize> },
    #[error("gradient requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
