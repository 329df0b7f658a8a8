//! The message passing policy: an image encoder per agent, rounds of
//! neighbour messages and updates, and per-agent policy and value heads.

use std::sync::Arc;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::group::{FiniteGroup, Representation};
use crate::symmetrizer::{BasisCache, EquivariantConv, EquivariantLinear, Field, FieldType};

use super::{CommGraph, MpnError};

/// Whether the network is constrained to quarter-turn symmetry or is the
/// unconstrained baseline with the same topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Equivariant,
    Standard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// Channel count of the unconstrained network; the equivariant network
    /// uses `⌊channels / √|G|⌋` regular copies.
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpnConfig {
    pub kind: NetworkKind,
    pub obs_channels: usize,
    pub obs_size: usize,
    pub num_actions: usize,
    /// Permutation of local actions under one counter-clockwise quarter turn.
    pub action_generator: Vec<usize>,
    pub conv: Vec<ConvSpec>,
    /// Output width of each message passing round (unconstrained count).
    pub rounds: Vec<usize>,
    pub aggregation: super::Aggregation,
    pub basis_seed: u64,
}

/// Per-agent action distributions and value estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPolicy {
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct MpnPolicy {
    config: MpnConfig,
    group: Arc<FiniteGroup>,
    edge_rep: Representation,
    action_rep: Representation,
    convs: Vec<EquivariantConv>,
    messages: Vec<EquivariantLinear>,
    updates: Vec<EquivariantLinear>,
    policy_head: EquivariantLinear,
    value_head: EquivariantLinear,
    /// Regular copies of the feature vector entering each round, plus the final one.
    widths: Vec<usize>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Representation of `group` on actions generated by the quarter-turn permutation.
pub fn action_representation(group: &Arc<FiniteGroup>, generator: &[usize]) -> Result<Representation, MpnError> {
    let n = generator.len();
    let perms = group
        .elements()
        .map(|g| {
            let k = group.quarter_turns(g)?;
            let mut p: Vec<usize> = (0..n).collect();
            for _ in 0..k {
                p = p.iter().map(|&i| generator[i]).collect();
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>, crate::group::GroupError>>()?;
    Ok(Representation::permutation(group.clone(), &perms)?)
}

impl MpnPolicy {
    /// Builds the network and draws initial weights from `seed`.
    pub fn new(config: MpnConfig, seed: u64) -> Result<Self, MpnError> {
        if config.action_generator.len() != config.num_actions {
            return Err(MpnError::Config(format!(
                "action generator has {} entries for {} actions",
                config.action_generator.len(),
                config.num_actions
            )));
        }
        if config.conv.is_empty() || config.rounds.is_empty() {
            return Err(MpnError::Config("need at least one convolution and one round".into()));
        }
        let group = Arc::new(match config.kind {
            NetworkKind::Equivariant => FiniteGroup::c4(),
            NetworkKind::Standard => FiniteGroup::trivial(),
        });
        let scale = (group.order() as f64).sqrt();
        let width = |n: usize| ((n as f64 / scale).floor() as usize).max(1);
        let regular = Representation::regular(group.clone());
        let (edge_rep, action_rep) = match config.kind {
            NetworkKind::Equivariant => (
                Representation::rotation(group.clone())?,
                action_representation(&group, &config.action_generator)?,
            ),
            NetworkKind::Standard => (
                Representation::trivial(group.clone(), 2),
                Representation::trivial(group.clone(), config.num_actions),
            ),
        };
        let mut cache = BasisCache::new(config.basis_seed);
        let mut convs = Vec::new();
        let mut size = config.obs_size;
        let mut channels_in = config.obs_channels;
        for (i, spec) in config.conv.iter().enumerate() {
            let c = width(spec.channels);
            let conv = EquivariantConv::new(
                group.clone(),
                i == 0,
                channels_in,
                c,
                spec.kernel,
                spec.stride,
                spec.padding,
                &mut cache,
            )?;
            size = conv.output_size(size)?;
            channels_in = c;
            convs.push(conv);
        }
        let feat = |d: usize| Field::interleaved(regular.clone(), d);
        let mut widths = vec![channels_in];
        let mut messages = Vec::new();
        let mut updates = Vec::new();
        for &r in &config.rounds {
            let d_in = *widths.last().expect("nonempty");
            let d_out = width(r);
            let msg_in = FieldType::new(vec![Field::contiguous(edge_rep.clone(), 1), feat(d_in)])?;
            let msg = EquivariantLinear::new(msg_in, FieldType::single(feat(d_out)), false, &mut cache)?;
            let upd_in = FieldType::new(vec![feat(d_in), feat(d_out)])?;
            let upd = EquivariantLinear::new(upd_in, FieldType::single(feat(d_out)), true, &mut cache)?;
            messages.push(msg);
            updates.push(upd);
            widths.push(d_out);
        }
        let d_final = *widths.last().expect("nonempty");
        let policy_head = EquivariantLinear::new(
            FieldType::single(feat(d_final)),
            FieldType::single(Field::contiguous(action_rep.clone(), 1)),
            true,
            &mut cache,
        )?;
        let value_head = EquivariantLinear::new(
            FieldType::single(feat(d_final)),
            FieldType::single(Field::contiguous(Representation::trivial(group.clone(), 1), 1)),
            true,
            &mut cache,
        )?;
        let mut policy = Self {
            config,
            group,
            edge_rep,
            action_rep,
            convs,
            messages,
            updates,
            policy_head,
            value_head,
            widths,
        };
        policy.reinit(seed);
        Ok(policy)
    }

    /// Redraws every weight from `seed`, keeping the equivariant bases.
    /// Equivalent to rebuilding with [`new`](Self::new) under the same seed.
    pub fn reinit(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let relu_gain = 2f64.sqrt();
        for c in &mut self.convs {
            c.init(&mut rng, relu_gain);
        }
        for (m, u) in self.messages.iter_mut().zip(&mut self.updates) {
            m.init(&mut rng, 1.0);
            u.init(&mut rng, relu_gain);
        }
        self.policy_head.init(&mut rng, 0.01);
        self.value_head.init(&mut rng, 1.0);
    }

    /// Redraws the policy head; the default gain keeps initial policies near uniform.
    pub fn init_policy_head<R: rand::Rng + ?Sized>(&mut self, rng: &mut R, gain: f64) {
        self.policy_head.init(rng, gain);
    }

    pub fn config(&self) -> &MpnConfig {
        &self.config
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn edge_rep(&self) -> &Representation {
        &self.edge_rep
    }

    pub fn action_rep(&self) -> &Representation {
        &self.action_rep
    }

    pub fn num_rounds(&self) -> usize {
        self.messages.len()
    }

    pub fn convs(&self) -> &[EquivariantConv] {
        &self.convs
    }

    pub fn message_layer(&self, round: usize) -> &EquivariantLinear {
        &self.messages[round]
    }

    pub fn update_layer(&self, round: usize) -> &EquivariantLinear {
        &self.updates[round]
    }

    pub fn policy_head(&self) -> &EquivariantLinear {
        &self.policy_head
    }

    pub fn value_head(&self) -> &EquivariantLinear {
        &self.value_head
    }

    /// Layout of the features entering round `round` (`round == num_rounds()`
    /// gives the final features).
    pub fn feature_type(&self, round: usize) -> FieldType {
        FieldType::single(Field::interleaved(
            Representation::regular(self.group.clone()),
            self.widths[round],
        ))
    }

    pub fn feature_dim(&self, round: usize) -> usize {
        self.widths[round] * self.group.order()
    }

    pub fn message_dim(&self, round: usize) -> usize {
        self.messages[round].dim_out()
    }

    fn layers(&self) -> Vec<(String, &EquivariantLinear)> {
        let mut out: Vec<(String, &EquivariantLinear)> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("encoder.conv{i}"), c.linear()));
        }
        for (i, (m, u)) in self.messages.iter().zip(&self.updates).enumerate() {
            out.push((format!("round{i}.message"), m));
            out.push((format!("round{i}.update"), u));
        }
        out.push(("policy_head".into(), &self.policy_head));
        out.push(("value_head".into(), &self.value_head));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut EquivariantLinear> {
        let mut out: Vec<&mut EquivariantLinear> = self.convs.iter_mut().map(|c| c.linear_mut()).collect();
        for (m, u) in self.messages.iter_mut().zip(self.updates.iter_mut()) {
            out.push(m);
            out.push(u);
        }
        out.push(&mut self.policy_head);
        out.push(&mut self.value_head);
        out
    }

    /// Offsets of each layer's coefficients within [`params`](Self::params).
    pub fn param_index(&self) -> Vec<ParamSlot> {
        let mut offset = 0;
        self.layers()
            .into_iter()
            .map(|(name, l)| {
                let slot = ParamSlot {
                    name,
                    offset,
                    len: l.num_coefficients(),
                };
                offset += slot.len;
                slot
            })
            .collect()
    }

    /// Number of trainable coefficients.
    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.num_coefficients()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, l) in self.layers() {
            out.extend_from_slice(l.coefficients());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), MpnError> {
        if params.len() != self.num_params() {
            return Err(MpnError::Config(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in self.layers_mut() {
            let n = l.num_coefficients();
            l.set_coefficients(&params[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    /// Local encoding of one agent's observation: convolutions with ReLU, then
    /// a global max over pixels for each channel.
    pub fn encode(&self, obs: &Array3<f64>) -> Result<Vec<f64>, MpnError> {
        let (c, h, w) = obs.dim();
        if c != self.config.obs_channels || h != self.config.obs_size || w != self.config.obs_size {
            return Err(MpnError::ObservationShape {
                expected: [self.config.obs_channels, self.config.obs_size, self.config.obs_size],
                got: [c, h, w],
            });
        }
        let mut x = obs.clone();
        for conv in &self.convs {
            x = conv.forward(&x)?;
            x.mapv_inplace(|v| v.max(0.0));
        }
        Ok(x.outer_iter()
            .map(|ch| ch.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// Message from a sender with features `f_src` across an edge with vector `e`.
    pub fn message(&self, round: usize, e: [f64; 2], f_src: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(2 + f_src.len());
        input.extend_from_slice(&e);
        input.extend_from_slice(f_src);
        self.messages[round].forward(&input)
    }

    /// Weighted sum of received messages in the given order.
    pub fn aggregate<'a>(&self, round: usize, inbox: impl IntoIterator<Item = (f64, &'a [f64])>) -> Vec<f64> {
        let mut acc = vec![0.0; self.message_dim(round)];
        for (w, m) in inbox {
            for (a, v) in acc.iter_mut().zip(m) {
                *a += w * v;
            }
        }
        acc
    }

    /// `ReLU(W·[f ; m] + b)`.
    pub fn update(&self, round: usize, f: &[f64], m: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(f.len() + m.len());
        input.extend_from_slice(f);
        input.extend_from_slice(m);
        let mut out = self.updates[round].forward(&input);
        for v in &mut out {
            *v = v.max(0.0);
        }
        out
    }

    /// Action logits and value estimate from final features.
    pub fn heads(&self, f: &[f64]) -> (Vec<f64>, f64) {
        (self.policy_head.forward(f), self.value_head.forward(f)[0])
    }

    /// Centralized evaluation of the joint policy, composed from the same
    /// per-agent operations a decentralized execution would perform.
    pub fn forward(&self, observations: &[Array3<f64>], graph: &CommGraph) -> Result<JointPolicy, MpnError> {
        if observations.len() != graph.num_agents() {
            return Err(MpnError::AgentCount {
                observations: observations.len(),
                graph: graph.num_agents(),
            });
        }
        let mut features = observations
            .iter()
            .map(|o| self.encode(o))
            .collect::<Result<Vec<_>, _>>()?;
        for round in 0..self.num_rounds() {
            let sent: Vec<Vec<f64>> = graph
                .edges()
                .iter()
                .zip(graph.edge_features())
                .map(|(e, &ef)| self.message(round, ef, &features[e.src]))
                .collect();
            features = (0..graph.num_agents())
                .map(|i| {
                    let inbox = graph.incoming(i).map(|k| (graph.weights()[k], sent[k].as_slice()));
                    let m = self.aggregate(round, inbox);
                    self.update(round, &features[i], &m)
                })
                .collect();
        }
        let mut logits = Vec::new();
        let mut values = Vec::new();
        for f in &features {
            let (l, v) = self.heads(f);
            logits.push(l);
            values.push(v);
        }
        let probs = logits.iter().map(|l| softmax(l)).collect();
        Ok(JointPolicy { logits, probs, values })
    }
}
