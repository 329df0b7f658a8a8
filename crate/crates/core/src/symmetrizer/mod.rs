//! Equivariant weight subspaces and the layers parameterized over them.

mod basis;
mod conv;
mod field;
mod linear;
mod nullspace;

use thiserror::Error;

use crate::group::GroupError;

pub use basis::{
    constraint_residual, default_num_samples, find_basis, invariant_basis, mixed_basis, symmetrize, BasisCache,
    EquivariantBasis, SINGULAR_VALUE_CUTOFF,
};
pub use conv::{conv_output_size, EquivariantConv};
pub use field::{Field, FieldType};
pub use linear::EquivariantLinear;
pub use nullspace::exact_constraint_rank;

#[derive(Debug, Error)]
pub enum SymmetrizerError {
    #[error("representations belong to different groups")]
    GroupMismatch,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("representation entry {0} is not an integer")]
    NonIntegral(f64),
    #[error("invalid field layout: {0}")]
    Layout(String),
    #[error("spatial size {size} is too small for a {kernel}×{kernel} filter")]
    TooSmall { size: usize, kernel: usize },
    #[error(transparent)]
    Group(#[from] GroupError),
}
