//! Decentralized execution of a message passing policy.
//!
//! Every agent runs as an [`AgentNode`] that sees only its own observation,
//! its own features and the messages its in-neighbours send it. Rounds are
//! synchronous: a node updates only once it holds exactly one message from
//! each in-neighbour for that round. Nodes can be stepped on one thread or
//! run as one worker per agent connected by channels.

mod node;
mod trace;

use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use ndarray::Array3;
use thiserror::Error;

use crate::mpn::{softmax, CommGraph, JointPolicy, MpnError, MpnPolicy};

pub use node::{AgentNode, Envelope, LocalView};
pub use trace::{isolation_audit, payload_hash, AuditReport, Trace, TraceRecord, Violation};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("agent {receiver} received a round {round} message from {sender}, which is not an in-neighbour")]
    NotANeighbour { round: usize, sender: usize, receiver: usize },
    #[error("agent {agent} was handed a message addressed to {receiver}")]
    Misrouted { agent: usize, receiver: usize },
    #[error("agent {receiver} received two round {round} messages from {sender}")]
    Duplicate { round: usize, sender: usize, receiver: usize },
    #[error("round {round} message from {sender} has {got} values, expected {expected}")]
    PayloadSize { round: usize, sender: usize, expected: usize, got: usize },
    #[error("agent {receiver} is missing the round {round} message from {sender}")]
    MissingMessage { round: usize, sender: usize, receiver: usize },
    #[error("agent {agent} timed out waiting for round {round} messages")]
    Deadlock { agent: usize, round: usize },
    #[error("agent {agent} is not at round {round}")]
    OutOfPhase { agent: usize, round: usize },
    #[error("worker for agent {0} panicked")]
    WorkerPanicked(usize),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mpn(#[from] MpnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecutionMode {
    /// All nodes stepped in agent order on the calling thread.
    Sequential,
    /// One worker thread per agent; a node waiting longer than `timeout` for
    /// a message reports a deadlock.
    Threaded { timeout: Duration },
}

impl ExecutionMode {
    pub fn threaded() -> Self {
        Self::Threaded {
            timeout: Duration::from_secs(10),
        }
    }
}

/// Runs a shared read-only network as a set of isolated agents.
#[derive(Clone, Debug)]
pub struct DistributedRuntime {
    policy: Arc<MpnPolicy>,
    mode: ExecutionMode,
}

impl DistributedRuntime {
    pub fn new(policy: Arc<MpnPolicy>, mode: ExecutionMode) -> Self {
        Self { policy, mode }
    }

    pub fn policy(&self) -> &Arc<MpnPolicy> {
        &self.policy
    }

    pub fn mode(&self) -> ExecutionMode {
        self.mode
    }

    /// Per-round message sizes, as declared by the network.
    pub fn message_dims(&self) -> Vec<usize> {
        (0..self.policy.num_rounds()).map(|r| self.policy.message_dim(r)).collect()
    }

    /// One decentralized forward pass over `graph`, tagging the trace with `step`.
    pub fn forward(&self, observations: &[Array3<f64>], graph: &CommGraph, step: usize) -> Result<(JointPolicy, Trace), RuntimeError> {
        if observations.len() != graph.num_agents() {
            return Err(MpnError::AgentCount {
                observations: observations.len(),
                graph: graph.num_agents(),
            }
            .into());
        }
        let nodes: Vec<AgentNode> = (0..graph.num_agents())
            .map(|i| AgentNode::new(Arc::clone(&self.policy), LocalView::from_graph(graph, i)))
            .collect();
        let (outputs, mut trace) = match self.mode {
            ExecutionMode::Sequential => run_sequential(nodes, observations, self.policy.num_rounds(), step)?,
            ExecutionMode::Threaded { timeout } => run_threaded(nodes, observations, self.policy.num_rounds(), step, timeout)?,
        };
        trace.canonicalize();
        let (logits, values): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
        let probs = logits.iter().map(|l| softmax(l)).collect();
        Ok((JointPolicy { logits, probs, values }, trace))
    }
}

type Outputs = Vec<(Vec<f64>, f64)>;

fn run_sequential(mut nodes: Vec<AgentNode>, obs: &[Array3<f64>], rounds: usize, step: usize) -> Result<(Outputs, Trace), RuntimeError> {
    let mut trace = Trace::default();
    for (node, o) in nodes.iter_mut().zip(obs) {
        node.encode(o)?;
    }
    for round in 0..rounds {
        let mut mail = Vec::new();
        for node in &nodes {
            mail.extend(node.send(round)?);
        }
        for env in mail {
            trace.push(step, round, env.sender, env.receiver, &env.payload);
            let receiver = env.receiver;
            nodes
                .get_mut(receiver)
                .ok_or(RuntimeError::Misrouted { agent: env.sender, receiver })?
                .receive(env)?;
        }
        for node in &mut nodes {
            node.update(round)?;
        }
    }
    let outputs = nodes.iter().map(|n| n.act()).collect::<Result<_, _>>()?;
    Ok((outputs, trace))
}

struct Worker {
    node: AgentNode,
    inbox: Receiver<Envelope>,
    /// Channels to out-neighbours only, indexed by receiver id.
    outboxes: Vec<(usize, Sender<Envelope>)>,
}

impl Worker {
    fn run(mut self, obs: &Array3<f64>, rounds: usize, step: usize, timeout: Duration) -> Result<((Vec<f64>, f64), Trace), RuntimeError> {
        let id = self.node.id();
        let mut trace = Trace::default();
        let mut early: Vec<Envelope> = Vec::new();
        self.node.encode(obs)?;
        for round in 0..rounds {
            for env in self.node.send(round)? {
                let tx = self
                    .outboxes
                    .iter()
                    .find(|(r, _)| *r == env.receiver)
                    .map(|(_, tx)| tx)
                    .ok_or(RuntimeError::Misrouted { agent: id, receiver: env.receiver })?;
                // a closed channel means the receiver already failed; its error is reported instead
                let _ = tx.send(env);
            }
            let (now, later): (Vec<_>, Vec<_>) = early.drain(..).partition(|e| e.round == round);
            early = later;
            for env in now {
                trace.push(step, round, env.sender, env.receiver, &env.payload);
                self.node.receive(env)?;
            }
            while !self.node.inbox_complete() {
                let env = match self.inbox.recv_timeout(timeout) {
                    Ok(env) => env,
                    Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                        return Err(RuntimeError::Deadlock { agent: id, round });
                    }
                };
                if env.round > round {
                    early.push(env);
                    continue;
                }
                trace.push(step, env.round, env.sender, env.receiver, &env.payload);
                self.node.receive(env)?;
            }
            self.node.update(round)?;
        }
        Ok((self.node.act()?, trace))
    }
}

fn run_threaded(nodes: Vec<AgentNode>, obs: &[Array3<f64>], rounds: usize, step: usize, timeout: Duration) -> Result<(Outputs, Trace), RuntimeError> {
    let channels: Vec<(Sender<Envelope>, Receiver<Envelope>)> = nodes.iter().map(|_| unbounded()).collect();
    let workers: Vec<Worker> = nodes
        .into_iter()
        .map(|node| {
            let outboxes = node
                .view()
                .out_edges
                .iter()
                .map(|&(r, _)| (r, channels[r].0.clone()))
                .collect();
            Worker {
                inbox: channels[node.id()].1.clone(),
                outboxes,
                node,
            }
        })
        .collect();
    // only workers hold senders, so a failed worker disconnects its receivers
    drop(channels);
    let results: Vec<Result<_, RuntimeError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .zip(obs)
            .map(|(w, o)| scope.spawn(move || w.run(o, rounds, step, timeout)))
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.join().unwrap_or(Err(RuntimeError::WorkerPanicked(i))))
            .collect()
    });
    // report the root cause rather than the deadlocks it induced downstream
    if let Some(i) = results.iter().position(|r| matches!(r, Err(e) if !matches!(e, RuntimeError::Deadlock { .. }))) {
        return Err(results.into_iter().nth(i).expect("index in range").expect_err("checked error"));
    }
    let mut outputs = Vec::with_capacity(results.len());
    let mut trace = Trace::default();
    for r in results {
        let (out, t) = r?;
        outputs.push(out);
        trace.extend(t);
    }
    Ok((outputs, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpn::policy::tests::small_config;
    use crate::mpn::{Aggregation, NetworkKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: NetworkKind, agents: usize, seed: u64) -> (Arc<MpnPolicy>, Vec<Array3<f64>>, CommGraph) {
        let policy = Arc::new(MpnPolicy::new(small_config(kind), seed).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..agents)
            .map(|_| Array3::from_shape_fn((1, 9, 9), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let positions = (0..agents).map(|_| [rng.random_range(0..4), rng.random_range(0..4)]).collect();
        let graph = CommGraph::within_radius(positions, 1, Aggregation::Mean);
        (policy, obs, graph)
    }

    fn bits(p: &JointPolicy) -> Vec<u64> {
        p.logits.iter().flatten().chain(&p.values).map(|v| v.to_bits()).collect()
    }

    #[test]
    fn both_modes_match_centralized_bitwise() {
        for seed in 0..4 {
            for kind in [NetworkKind::Equivariant, NetworkKind::Standard] {
                let (policy, obs, graph) = setup(kind, 5, seed);
                let central = policy.forward(&obs, &graph).unwrap();
                for mode in [ExecutionMode::Sequential, ExecutionMode::threaded()] {
                    let rt = DistributedRuntime::new(Arc::clone(&policy), mode);
                    let (dist, trace) = rt.forward(&obs, &graph, 0).unwrap();
                    assert_eq!(bits(&central), bits(&dist), "{mode:?}");
                    assert_eq!(trace.records.len(), graph.edges().len() * policy.num_rounds());
                    assert!(isolation_audit(&trace, std::slice::from_ref(&graph), &rt.message_dims()).is_clean());
                }
            }
        }
    }

    #[test]
    fn sequential_and_threaded_traces_agree() {
        let (policy, obs, graph) = setup(NetworkKind::Equivariant, 6, 9);
        let a = DistributedRuntime::new(Arc::clone(&policy), ExecutionMode::Sequential).forward(&obs, &graph, 2).unwrap().1;
        let b = DistributedRuntime::new(policy, ExecutionMode::threaded()).forward(&obs, &graph, 2).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn single_agent_runs_with_empty_messages() {
        let (policy, obs, _) = setup(NetworkKind::Equivariant, 1, 3);
        let graph = CommGraph::isolated(vec![[0, 0]]);
        let (p, trace) = DistributedRuntime::new(Arc::clone(&policy), ExecutionMode::Sequential).forward(&obs, &graph, 0).unwrap();
        assert!(trace.records.is_empty());
        let mut f = policy.encode(&obs[0]).unwrap();
        for r in 0..policy.num_rounds() {
            f = policy.update(r, &f, &vec![0.0; policy.message_dim(r)]);
        }
        assert_eq!(p.logits[0], policy.heads(&f).0);
    }

    #[test]
    fn delivery_order_does_not_matter() {
        let (policy, obs, graph) = setup(NetworkKind::Standard, 5, 4);
        let mut outs = Vec::new();
        for reverse in [false, true] {
            let mut nodes: Vec<AgentNode> = (0..5).map(|i| AgentNode::new(Arc::clone(&policy), LocalView::from_graph(&graph, i))).collect();
            for (n, o) in nodes.iter_mut().zip(&obs) {
                n.encode(o).unwrap();
            }
            for round in 0..policy.num_rounds() {
                let mut mail: Vec<Envelope> = nodes.iter().flat_map(|n| n.send(round).unwrap()).collect();
                if reverse {
                    mail.reverse();
                }
                for e in mail {
                    let r = e.receiver;
                    nodes[r].receive(e).unwrap();
                }
                for n in &mut nodes {
                    n.update(round).unwrap();
                }
            }
            outs.push(nodes.iter().map(|n| n.act().unwrap().0).collect::<Vec<_>>());
        }
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn node_rejects_foreign_and_malformed_messages() {
        let (policy, obs, _) = setup(NetworkKind::Equivariant, 3, 5);
        let graph = CommGraph::within_radius(vec![[0, 0], [0, 1], [0, 5]], 1, Aggregation::Mean);
        let mut node = AgentNode::new(Arc::clone(&policy), LocalView::from_graph(&graph, 0));
        node.encode(&obs[0]).unwrap();
        let dim = policy.message_dim(0);
        let env = |sender, len| Envelope { round: 0, sender, receiver: 0, payload: vec![0.0; len] };
        assert!(matches!(node.receive(env(2, dim)), Err(RuntimeError::NotANeighbour { sender: 2, .. })));
        assert!(matches!(node.receive(env(1, dim + 1)), Err(RuntimeError::PayloadSize { .. })));
        assert!(matches!(node.update(0), Err(RuntimeError::MissingMessage { sender: 1, .. })));
        node.receive(env(1, dim)).unwrap();
        assert!(matches!(node.receive(env(1, dim)), Err(RuntimeError::Duplicate { .. })));
        assert!(matches!(node.receive(Envelope { receiver: 1, ..env(1, dim) }), Err(RuntimeError::Misrouted { .. })));
        node.update(0).unwrap();
        assert!(matches!(node.update(0), Err(RuntimeError::OutOfPhase { .. })));
    }

    #[test]
    fn audit_flags_injected_faults() {
        let (policy, obs, graph) = setup(NetworkKind::Equivariant, 5, 6);
        let rt = DistributedRuntime::new(policy, ExecutionMode::Sequential);
        let (_, trace) = rt.forward(&obs, &graph, 0).unwrap();
        let dims = rt.message_dims();
        let graphs = [graph.clone()];
        assert!(isolation_audit(&trace, &graphs, &dims).is_clean());

        let (s, r) = (0..5)
            .flat_map(|s| (0..5).map(move |r| (s, r)))
            .find(|&(s, r)| s != r && !graph.is_edge(r, s))
            .expect("a non-edge exists");
        let mut forged = trace.clone();
        forged.push(0, 0, s, r, &vec![0.0; dims[0]]);
        let rep = isolation_audit(&forged, &graphs, &dims);
        assert!(rep.violations.contains(&Violation::OutOfGraph { step: 0, round: 0, sender: s, receiver: r }));

        let mut tampered = trace.clone();
        if let Some(rec) = tampered.records.first_mut() {
            rec.payload_dims += 1;
            let rep = isolation_audit(&tampered, &graphs, &dims);
            assert!(rep.violations.iter().any(|v| matches!(v, Violation::PayloadDims { .. })));
        }

        let mut dropped = trace.clone();
        if dropped.records.pop().is_some() {
            let rep = isolation_audit(&dropped, &graphs, &dims);
            assert!(rep.violations.iter().any(|v| matches!(v, Violation::EdgeCount { count: 0, .. })));
        }
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let (policy, obs, graph) = setup(NetworkKind::Equivariant, 4, 8);
        let (_, trace) = DistributedRuntime::new(policy, ExecutionMode::Sequential).forward(&obs, &graph, 7).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        assert_eq!(Trace::read_jsonl(buf.as_slice()).unwrap(), trace);
        assert!(matches!(Trace::read_jsonl(&b"{not json\n"[..]), Err(RuntimeError::Trace(_))));
    }

    #[test]
    fn wrong_agent_count_is_rejected() {
        let (policy, obs, graph) = setup(NetworkKind::Equivariant, 3, 1);
        let rt = DistributedRuntime::new(policy, ExecutionMode::Sequential);
        assert!(matches!(rt.forward(&obs[..2], &graph, 0), Err(RuntimeError::Mpn(MpnError::AgentCount { .. }))));
    }
}
