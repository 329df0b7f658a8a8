//! A single agent as an isolated state machine.

use std::sync::Arc;

use ndarray::Array3;

use crate::mpn::{Aggregation, CommGraph, MpnPolicy};

use super::RuntimeError;

/// A message in flight between two agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub payload: Vec<f64>,
}

/// What one agent knows about the communication graph: whom it sends to
/// (with the shared edge vector) and whom it may hear from.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalView {
    pub id: usize,
    /// `(receiver, x_receiver − x_self)`, sorted by receiver.
    pub out_edges: Vec<(usize, [f64; 2])>,
    /// Sorted sender ids.
    pub in_neighbours: Vec<usize>,
    pub aggregation: Aggregation,
}

impl LocalView {
    pub fn from_graph(graph: &CommGraph, id: usize) -> Self {
        let mut out_edges: Vec<(usize, [f64; 2])> = graph
            .edges()
            .iter()
            .zip(graph.edge_features())
            .filter(|(e, _)| e.src == id)
            .map(|(e, &f)| (e.dst, f))
            .collect();
        out_edges.sort_by_key(|&(d, _)| d);
        let in_neighbours = graph.incoming(id).map(|k| graph.edges()[k].src).collect();
        Self {
            id,
            out_edges,
            in_neighbours,
            aggregation: graph.aggregation(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    /// Features hold the input to round `usize`.
    Ready(usize),
    Done,
}

/// Holds a read-only copy of the network, its own features and an inbox.
/// Nothing else about other agents is reachable from here.
#[derive(Debug)]
pub struct AgentNode {
    policy: Arc<MpnPolicy>,
    view: LocalView,
    features: Vec<f64>,
    inbox: Vec<(usize, Vec<f64>)>,
    phase: Phase,
}

impl AgentNode {
    pub fn new(policy: Arc<MpnPolicy>, view: LocalView) -> Self {
        Self {
            policy,
            view,
            features: Vec::new(),
            inbox: Vec::new(),
            phase: Phase::Idle,
        }
    }

    pub fn id(&self) -> usize {
        self.view.id
    }

    pub fn view(&self) -> &LocalView {
        &self.view
    }

    /// Replaces the neighbourhood, e.g. when the graph changes between steps.
    pub fn set_view(&mut self, view: LocalView) {
        assert_eq!(view.id, self.view.id, "a node keeps its identity");
        self.view = view;
        self.phase = Phase::Idle;
    }

    pub fn encode(&mut self, obs: &Array3<f64>) -> Result<(), RuntimeError> {
        self.features = self.policy.encode(obs)?;
        self.inbox.clear();
        self.phase = Phase::Ready(0);
        Ok(())
    }

    fn expect_round(&self, round: usize) -> Result<(), RuntimeError> {
        match self.phase {
            Phase::Ready(r) if r == round => Ok(()),
            _ => Err(RuntimeError::OutOfPhase { agent: self.view.id, round }),
        }
    }

    /// Messages for every out-neighbour in this round.
    pub fn send(&self, round: usize) -> Result<Vec<Envelope>, RuntimeError> {
        self.expect_round(round)?;
        Ok(self
            .view
            .out_edges
            .iter()
            .map(|&(receiver, e)| Envelope {
                round,
                sender: self.view.id,
                receiver,
                payload: self.policy.message(round, e, &self.features),
            })
            .collect())
    }

    /// Accepts one message, rejecting anything that is not from a current
    /// in-neighbour for this round with the declared message size.
    pub fn receive(&mut self, env: Envelope) -> Result<(), RuntimeError> {
        let id = self.view.id;
        self.expect_round(env.round)?;
        if env.receiver != id {
            return Err(RuntimeError::Misrouted { agent: id, receiver: env.receiver });
        }
        if self.view.in_neighbours.binary_search(&env.sender).is_err() {
            return Err(RuntimeError::NotANeighbour {
                round: env.round,
                sender: env.sender,
                receiver: id,
            });
        }
        if self.inbox.iter().any(|(s, _)| *s == env.sender) {
            return Err(RuntimeError::Duplicate {
                round: env.round,
                sender: env.sender,
                receiver: id,
            });
        }
        let dim = self.policy.message_dim(env.round);
        if env.payload.len() != dim {
            return Err(RuntimeError::PayloadSize {
                round: env.round,
                sender: env.sender,
                expected: dim,
                got: env.payload.len(),
            });
        }
        self.inbox.push((env.sender, env.payload));
        Ok(())
    }

    pub fn inbox_complete(&self) -> bool {
        self.inbox.len() == self.view.in_neighbours.len()
    }

    /// Aggregates the inbox in sender order and applies the update.
    pub fn update(&mut self, round: usize) -> Result<(), RuntimeError> {
        self.expect_round(round)?;
        if !self.inbox_complete() {
            let missing = self
                .view
                .in_neighbours
                .iter()
                .copied()
                .find(|s| !self.inbox.iter().any(|(t, _)| t == s))
                .expect("an incomplete inbox lacks some neighbour");
            return Err(RuntimeError::MissingMessage {
                round,
                sender: missing,
                receiver: self.view.id,
            });
        }
        self.inbox.sort_by_key(|(s, _)| *s);
        let w = match self.view.aggregation {
            Aggregation::Mean => 1.0 / self.inbox.len() as f64,
            Aggregation::Sum => 1.0,
        };
        let m = self.policy.aggregate(round, self.inbox.iter().map(|(_, p)| (w, p.as_slice())));
        self.features = self.policy.update(round, &self.features, &m);
        self.inbox.clear();
        self.phase = if round + 1 == self.policy.num_rounds() {
            Phase::Done
        } else {
            Phase::Ready(round + 1)
        };
        Ok(())
    }

    /// Local logits and value once every round has run.
    pub fn act(&self) -> Result<(Vec<f64>, f64), RuntimeError> {
        if self.phase != Phase::Done && !(self.phase == Phase::Ready(0) && self.policy.num_rounds() == 0) {
            return Err(RuntimeError::OutOfPhase {
                agent: self.view.id,
                round: self.policy.num_rounds(),
            });
        }
        Ok(self.policy.heads(&self.features))
    }
}
