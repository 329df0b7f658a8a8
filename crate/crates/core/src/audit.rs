//! Whole-system symmetry and decentralization checks on a network.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{EnvConfig, GlobalState, GlobalSymmetryAction, TrafficState, WildlifeState};
use crate::group::Element;
use crate::mpn::{Aggregation, MpnConfig, MpnError, MpnPolicy};
use crate::runtime::{isolation_audit, DistributedRuntime, ExecutionMode, RuntimeError};

/// Reachable states: a fresh episode advanced by a random number of uniformly random joint actions.
pub fn sample_states(config: &EnvConfig, count: usize, seed: u64) -> Vec<GlobalState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut s = match config {
            EnvConfig::Wildlife(c) => GlobalState::Wildlife(WildlifeState::random(c, &mut rng).expect("validated config")),
            EnvConfig::Traffic(_) => GlobalState::Traffic(TrafficState::new()),
        };
        let horizon = match config {
            EnvConfig::Wildlife(c) => c.max_steps,
            EnvConfig::Traffic(c) => c.spawn_steps + 50,
        };
        let walk = rng.random_range(0..horizon);
        let mut alive = true;
        for _ in 0..walk {
            let a: Vec<usize> = (0..config.num_agents()).map(|_| rng.random_range(0..config.num_actions())).collect();
            let noise = match config {
                EnvConfig::Wildlife(_) => crate::env::Noise::Wildlife(rng.random_range(0..crate::env::wildlife::DRONE_ACTIONS)),
                EnvConfig::Traffic(_) => crate::env::Noise::Traffic(crate::env::TrafficEnv::sample_noise(&mut rng)),
            };
            if s.step_with_noise(config, &a, &noise).expect("valid actions").1 {
                alive = false;
                break;
            }
        }
        if alive {
            out.push(s);
        }
    }
    out
}

/// Worst disagreement between `π(g·s)` and `g·π(s)` for one group element.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ElementResidual {
    pub element: Element,
    /// Largest total-variation distance between matched agents' action distributions.
    pub max_tv: f64,
    pub max_logit_residual: f64,
    pub max_value_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub samples: usize,
    pub per_element: Vec<ElementResidual>,
    /// Per sample, the largest TV distance over the tested elements.
    pub per_sample_max_tv: Vec<f64>,
}

impl EquivarianceReport {
    pub fn max_tv(&self) -> f64 {
        self.per_element.iter().map(|e| e.max_tv).fold(0.0, f64::max)
    }

    pub fn max_logit_residual(&self) -> f64 {
        self.per_element.iter().map(|e| e.max_logit_residual).fold(0.0, f64::max)
    }

    /// Fraction of samples whose worst TV distance exceeds `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.per_sample_max_tv.is_empty() {
            return 0.0;
        }
        self.per_sample_max_tv.iter().filter(|&&t| t > threshold).count() as f64 / self.per_sample_max_tv.len() as f64
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares the joint policy on each transformed state with the transformed
/// joint policy, for every listed group element.
pub fn policy_equivariance(
    policy: &MpnPolicy,
    config: &EnvConfig,
    states: &[GlobalState],
    elements: &[Element],
    aggregation: Aggregation,
) -> Result<EquivarianceReport, MpnError> {
    let mut report = EquivarianceReport {
        samples: states.len(),
        per_element: elements.iter().map(|&g| ElementResidual { element: g, ..Default::default() }).collect(),
        per_sample_max_tv: Vec::with_capacity(states.len()),
    };
    let syms: Vec<GlobalSymmetryAction> = elements.iter().map(|&g| GlobalSymmetryAction::new(config, g)).collect();
    for s in states {
        let base = policy.forward(&s.observations(), &s.graph(aggregation))?;
        let mut worst = 0.0f64;
        for (sym, res) in syms.iter().zip(&mut report.per_element) {
            let gs = sym.transform_state(s);
            let moved = policy.forward(&gs.observations(), &gs.graph(aggregation))?;
            let expected = sym.transform_distributions(&base.probs);
            let expected_logits = sym.transform_distributions(&base.logits);
            for (p, q) in moved.probs.iter().zip(&expected) {
                let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
                res.max_tv = res.max_tv.max(tv);
                worst = worst.max(tv);
            }
            for (l, m) in moved.logits.iter().zip(&expected_logits) {
                res.max_logit_residual = res.max_logit_residual.max(max_abs(l, m));
            }
            let ev = sym.transform_agent_values(&base.values);
            res.max_value_residual = res.max_value_residual.max(max_abs(&moved.values, &ev));
        }
        report.per_sample_max_tv.push(worst);
    }
    Ok(report)
}

/// A network with freshly drawn weights whose policy head has unit gain, so
/// that action distributions are far from uniform and symmetry breaking is visible.
pub fn random_draw(config: MpnConfig, seed: u64) -> Result<MpnPolicy, MpnError> {
    Ok(redraw(&MpnPolicy::new(config, 0)?, seed))
}

/// Same weights as [`random_draw`] with the template's configuration, without
/// recomputing the bases.
pub fn redraw(template: &MpnPolicy, seed: u64) -> MpnPolicy {
    let mut policy = template.clone();
    policy.reinit(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    policy.init_policy_head(&mut rng, 1.0);
    policy
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DistributedReport {
    pub samples: usize,
    pub bitwise_equal: usize,
    pub max_abs_diff: f64,
    pub messages: usize,
    pub isolation_violations: usize,
}

impl DistributedReport {
    pub fn is_exact(&self) -> bool {
        self.bitwise_equal == self.samples && self.isolation_violations == 0
    }
}

/// Runs each state through the centralized and the distributed forward pass
/// and audits every message trace against that state's graph.
pub fn distributed_equality(
    policy: Arc<MpnPolicy>,
    states: &[GlobalState],
    aggregation: Aggregation,
    mode: ExecutionMode,
) -> Result<DistributedReport, RuntimeError> {
    let rt = DistributedRuntime::new(Arc::clone(&policy), mode);
    let dims = rt.message_dims();
    let mut report = DistributedReport {
        samples: states.len(),
        ..Default::default()
    };
    for (step, s) in states.iter().enumerate() {
        let obs = s.observations();
        let graph = s.graph(aggregation);
        let central = policy.forward(&obs, &graph)?;
        let (dist, trace) = rt.forward(&obs, &graph, 0)?;
        let a: Vec<f64> = central.logits.iter().flatten().chain(&central.values).copied().collect();
        let b: Vec<f64> = dist.logits.iter().flatten().chain(&dist.values).copied().collect();
        if a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()) {
            report.bitwise_equal += 1;
        }
        report.max_abs_diff = report.max_abs_diff.max(max_abs(&a, &b));
        report.messages += trace.records.len();
        report.isolation_violations += isolation_audit(&trace, std::slice::from_ref(&graph), &dims).violations.len();
        log::trace!("distributed check {step}: {} messages", trace.records.len());
    }
    Ok(report)
}
