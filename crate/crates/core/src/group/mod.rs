//! Finite groups, their matrix representations, and the quarter-turn action on images.

mod finite;
mod image;
mod representation;

use thiserror::Error;

pub use finite::{c4_group, Element, FiniteGroup};
pub use image::{rot90, rotate_coord, rotate_image, ImageAction};
pub(crate) use representation::max_abs_diff;
pub use representation::{
    direct_sum, permutation_representation, rotation_representation, RepKind, Representation,
    RepresentationDoc, HOMOMORPHISM_TOL,
};

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("group has no elements")]
    Empty,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cayley table not closed: {g} composes to {value}")]
    Closure { g: Element, value: usize },
    #[error("no identity element")]
    NoIdentity,
    #[error("element {0} has no inverse")]
    NoInverse(Element),
    #[error("composition is not associative for ({0}, {1}, {2})")]
    NotAssociative(Element, Element, Element),
    #[error("representations belong to different groups")]
    GroupMismatch,
    #[error("not a bijection: {0}")]
    NotBijective(String),
    #[error("homomorphism violated: {0}")]
    Homomorphism(String),
    #[error("unsupported group: {0}")]
    Unsupported(String),
    #[error("image must be square, got {height}×{width}")]
    NonSquare { height: usize, width: usize },
}
