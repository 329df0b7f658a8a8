//! Training samples and symmetry augmentation.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;

use crate::env::{EnvConfig, GlobalSymmetryAction};
use crate::group::Element;
use crate::mpn::{CommGraph, GraphBatch};

/// One joint decision: everything a PPO update needs about a time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub observations: Vec<Array3<f64>>,
    pub graph: CommGraph,
    pub actions: Vec<usize>,
    /// Per-agent log-probabilities of `actions` under the behaviour policy.
    pub old_log_probs: Vec<f64>,
    pub advantage: f64,
    pub value_target: f64,
}

impl Sample {
    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    /// The same decision seen in the transformed world.
    pub fn transformed(&self, sym: &GlobalSymmetryAction) -> Self {
        let mut old = vec![0.0; self.old_log_probs.len()];
        for (i, &lp) in self.old_log_probs.iter().enumerate() {
            old[sym.agent_perm()[i]] = lp;
        }
        Self {
            observations: sym.transform_observations(&self.observations),
            graph: sym.transform_graph(&self.graph),
            actions: sym.transform_actions(&self.actions),
            old_log_probs: old,
            advantage: self.advantage,
            value_target: self.value_target,
        }
    }
}

/// Stacks agent observations and merges graphs for a batched forward pass.
pub fn stack(samples: &[&Sample]) -> (Array4<f64>, GraphBatch) {
    let first = &samples[0].observations[0];
    let (c, h, w) = first.dim();
    let total: usize = samples.iter().map(|s| s.num_agents()).sum();
    let mut obs = Array4::zeros((total, c, h, w));
    let mut row = 0;
    for s in samples {
        for o in &s.observations {
            obs.index_axis_mut(ndarray::Axis(0), row).assign(o);
            row += 1;
        }
    }
    let graph = GraphBatch::from_graphs(samples.iter().map(|s| &s.graph));
    (obs, graph)
}

/// Per-agent action indices flattened in stacking order.
pub fn stacked_actions(samples: &[&Sample]) -> Vec<usize> {
    samples.iter().flat_map(|s| s.actions.iter().copied()).collect()
}

pub fn stacked_old_log_probs(samples: &[&Sample]) -> Array1<f64> {
    samples.iter().flat_map(|s| s.old_log_probs.iter().copied()).collect()
}

/// Transforms each sample by one group element drawn uniformly; returns the
/// new batch and the elements used.
pub fn augment_stochastic<R: Rng + ?Sized>(batch: &[Sample], env: &EnvConfig, rng: &mut R) -> (Vec<Sample>, Vec<Element>) {
    let syms: Vec<GlobalSymmetryAction> = (0..4).map(|g| GlobalSymmetryAction::new(env, g)).collect();
    let mut out = Vec::with_capacity(batch.len());
    let mut drawn = Vec::with_capacity(batch.len());
    for s in batch {
        let g = rng.random_range(0..syms.len());
        out.push(s.transformed(&syms[g]));
        drawn.push(g);
    }
    (out, drawn)
}

/// Replaces each sample by its images under every group element, keeping
/// the orbit of a sample contiguous with the identity first.
pub fn augment_full(batch: &[Sample], env: &EnvConfig) -> Vec<Sample> {
    let syms: Vec<GlobalSymmetryAction> = (0..4).map(|g| GlobalSymmetryAction::new(env, g)).collect();
    batch.iter().flat_map(|s| syms.iter().map(move |sym| s.transformed(sym))).collect()
}
