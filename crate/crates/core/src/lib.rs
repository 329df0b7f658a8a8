//! Multi-agent policy networks that are equivariant to global symmetries of the
//! world (quarter-turn rotations combined with agent permutations) while
//! executing with only local observations and neighbour-to-neighbour messages.
//!
//! The crate is organised bottom-up:
//!
//! - [`group`]: finite groups, representations, and the image action.
//! - [`symmetrizer`]: equivariant weight bases and the layers built on them.
//! - [`mpn`]: the equivariant message passing policy and its non-equivariant baseline.
//! - [`env`]: the wildlife monitoring and traffic light environments with their symmetries.
//! - [`runtime`]: decentralized execution of a policy over isolated agent nodes.
//! - [`train`]: PPO, data augmentation baselines, evaluation and learning-rate sweeps.
//! - [`audit`]: end-to-end equivariance and decentralized-execution checks.

pub mod audit;
pub mod env;
pub mod group;
pub mod mpn;
pub mod runtime;
pub mod symmetrizer;
pub mod train;
