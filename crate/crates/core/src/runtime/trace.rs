//! Message traces and the isolation audit.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mpn::CommGraph;

use super::RuntimeError;

/// One delivered message. `step` indexes the environment step (and so the
/// graph) the exchange belonged to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default)]
    pub step: usize,
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub payload_hash: String,
    pub payload_dims: usize,
}

pub fn payload_hash(payload: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in payload {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, step: usize, round: usize, sender: usize, receiver: usize, payload: &[f64]) {
        self.records.push(TraceRecord {
            step,
            round,
            sender,
            receiver,
            payload_hash: payload_hash(payload),
            payload_dims: payload.len(),
        });
    }

    /// Sorts into `(step, round, receiver, sender)` order so that traces from
    /// sequential and threaded runs compare equal.
    pub fn canonicalize(&mut self) {
        self.records.sort_by_key(|r| (r.step, r.round, r.receiver, r.sender));
    }

    pub fn extend(&mut self, other: Trace) {
        self.records.extend(other.records);
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), RuntimeError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| RuntimeError::Trace(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, RuntimeError> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| RuntimeError::Trace(format!("line {}: {e}", n + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A message travelled along a pair that was not an edge at that step.
    OutOfGraph { step: usize, round: usize, sender: usize, receiver: usize },
    /// The payload size differs from the declared message size.
    PayloadDims { step: usize, round: usize, sender: usize, receiver: usize, expected: usize, got: usize },
    /// An edge carried a number of messages other than one in some round.
    EdgeCount { step: usize, round: usize, sender: usize, receiver: usize, count: usize },
    /// The trace refers to a step without a recorded graph.
    UnknownStep { step: usize },
    /// The trace refers to a round the network does not have.
    UnknownRound { step: usize, round: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a trace against the graph of every step and the per-round message
/// sizes: every message must follow a current edge, have the declared size,
/// and each edge must carry exactly one message per round.
pub fn isolation_audit(trace: &Trace, graphs: &[CommGraph], message_dims: &[usize]) -> AuditReport {
    let mut report = AuditReport {
        messages: trace.records.len(),
        violations: Vec::new(),
    };
    let mut counts: BTreeMap<(usize, usize, usize, usize), usize> = BTreeMap::new();
    for r in &trace.records {
        let Some(graph) = graphs.get(r.step) else {
            report.violations.push(Violation::UnknownStep { step: r.step });
            continue;
        };
        let Some(&dim) = message_dims.get(r.round) else {
            report.violations.push(Violation::UnknownRound { step: r.step, round: r.round });
            continue;
        };
        if !graph.is_edge(r.receiver, r.sender) {
            report.violations.push(Violation::OutOfGraph {
                step: r.step,
                round: r.round,
                sender: r.sender,
                receiver: r.receiver,
            });
        }
        if r.payload_dims != dim {
            report.violations.push(Violation::PayloadDims {
                step: r.step,
                round: r.round,
                sender: r.sender,
                receiver: r.receiver,
                expected: dim,
                got: r.payload_dims,
            });
        }
        *counts.entry((r.step, r.round, r.sender, r.receiver)).or_default() += 1;
    }
    let steps: Vec<usize> = {
        let mut s: Vec<usize> = trace.records.iter().map(|r| r.step).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    for step in steps {
        let Some(graph) = graphs.get(step) else { continue };
        for round in 0..message_dims.len() {
            for e in graph.edges() {
                let count = counts.get(&(step, round, e.src, e.dst)).copied().unwrap_or(0);
                if count != 1 {
                    report.violations.push(Violation::EdgeCount {
                        step,
                        round,
                        sender: e.src,
                        receiver: e.dst,
                        count,
                    });
                }
            }
        }
    }
    report
}
