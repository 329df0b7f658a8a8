//! Message passing policies: the equivariant network and its unconstrained baseline.

mod batch;
mod checkpoint;
mod graph;
pub(crate) mod policy;

use thiserror::Error;

use crate::group::GroupError;
use crate::symmetrizer::SymmetrizerError;

pub use batch::{BatchCache, BatchOutput};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use graph::{Aggregation, CommGraph, Edge, GraphBatch};
pub use policy::{
    action_representation, softmax, ConvSpec, JointPolicy, MpnConfig, MpnPolicy, NetworkKind, ParamSlot,
};

#[derive(Debug, Error)]
pub enum MpnError {
    #[error("edge references agent {agent} but the graph has {agents} agents")]
    UnknownAgent { agent: usize, agents: usize },
    #[error("{observations} observations for a graph of {graph} agents")]
    AgentCount { observations: usize, graph: usize },
    #[error("observation shape {got:?}, expected {expected:?}")]
    ObservationShape { expected: [usize; 3], got: [usize; 3] },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Symmetrizer(#[from] SymmetrizerError),
    #[error(transparent)]
    Group(#[from] GroupError),
}
