//! Global quarter-turn symmetries of the environments and an empirical check
//! that rewards and transitions respect them.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::group::{rot90, Element, FiniteGroup};
use crate::mpn::{action_representation, CommGraph};

use super::traffic::{self, rotate_lane, rotate_light, TrafficState, LANES};
use super::wildlife::{self, WildlifeState};
use super::{EnvConfig, EnvError, EnvKind};

/// A complete environment state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalState {
    Wildlife(WildlifeState),
    Traffic(TrafficState),
}

/// The randomness consumed by one step.
#[derive(Clone, Debug, PartialEq)]
pub enum Noise {
    /// The poacher's action.
    Wildlife(usize),
    /// One uniform draw per entry lane.
    Traffic([f64; LANES]),
}

/// How one group element acts on every part of an environment.
#[derive(Clone, Debug)]
pub struct GlobalSymmetryAction {
    kind: EnvKind,
    g: Element,
    turns: usize,
    /// Agent `i` becomes agent `agent_perm[i]`.
    agent_perm: Vec<usize>,
    /// Local action `a` becomes `action_map[a]`.
    action_map: Vec<usize>,
    /// Pixel rotation of observations.
    obs_turns: usize,
    grid: usize,
}

impl GlobalSymmetryAction {
    pub fn new(config: &EnvConfig, g: Element) -> Self {
        let group = std::sync::Arc::new(FiniteGroup::c4());
        let turns = group.quarter_turns(g).expect("C4 elements are quarter turns");
        let rep = action_representation(&group, &config.action_generator()).expect("valid generator");
        // (ρ(g)x)_i = x_perm[i], so a one-hot at `a` moves to perm⁻¹(a)
        let perm = rep.permutation_of(g).expect("permutation representation");
        let mut action_map = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            action_map[p] = i;
        }
        let (agent_perm, grid) = match config {
            EnvConfig::Wildlife(c) => ((0..c.agents).collect(), c.grid),
            EnvConfig::Traffic(_) => ((0..traffic::LIGHTS).map(|i| rotate_light(i, turns)).collect(), 2),
        };
        Self {
            kind: config.kind(),
            g,
            turns,
            agent_perm,
            action_map,
            obs_turns: turns,
            grid,
        }
    }

    pub fn element(&self) -> Element {
        self.g
    }

    pub fn turns(&self) -> usize {
        self.turns
    }

    pub fn agent_perm(&self) -> &[usize] {
        &self.agent_perm
    }

    pub fn action_map(&self) -> &[usize] {
        &self.action_map
    }

    pub fn transform_state(&self, s: &GlobalState) -> GlobalState {
        match s {
            GlobalState::Wildlife(w) => GlobalState::Wildlife(w.rotated(self.turns)),
            GlobalState::Traffic(t) => GlobalState::Traffic(t.rotated(self.turns)),
        }
    }

    pub fn transform_actions(&self, actions: &[usize]) -> Vec<usize> {
        let mut out = vec![0; actions.len()];
        for (i, &a) in actions.iter().enumerate() {
            out[self.agent_perm[i]] = self.action_map[a];
        }
        out
    }

    /// Permutes agents and applies the action permutation to each agent's distribution.
    pub fn transform_distributions(&self, probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); probs.len()];
        for (i, p) in probs.iter().enumerate() {
            let mut q = vec![0.0; p.len()];
            for (a, &v) in p.iter().enumerate() {
                q[self.action_map[a]] = v;
            }
            out[self.agent_perm[i]] = q;
        }
        out
    }

    pub fn transform_agent_values(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (i, &v) in values.iter().enumerate() {
            out[self.agent_perm[i]] = v;
        }
        out
    }

    pub fn transform_noise(&self, noise: &Noise) -> Noise {
        match noise {
            Noise::Wildlife(a) => Noise::Wildlife(self.action_map[*a]),
            Noise::Traffic(u) => {
                let mut v = [0.0; LANES];
                for (l, &x) in u.iter().enumerate() {
                    v[rotate_lane(l, self.turns)] = x;
                }
                Noise::Traffic(v)
            }
        }
    }

    pub fn transform_observations(&self, obs: &[Array3<f64>]) -> Vec<Array3<f64>> {
        let mut out = vec![Array3::zeros((0, 0, 0)); obs.len()];
        for (i, o) in obs.iter().enumerate() {
            out[self.agent_perm[i]] = rot90(o, self.obs_turns).expect("observations are square");
        }
        out
    }

    /// Rotates agent positions about the grid centre and renames agents;
    /// edge vectors rotate with them.
    pub fn transform_graph(&self, graph: &CommGraph) -> CommGraph {
        let n = self.grid as i64;
        let turns = self.turns;
        graph.map_positions(&self.agent_perm, |p| {
            (0..turns).fold(p, |[r, c], _| [n - 1 - c, r])
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }
}

impl GlobalState {
    pub fn observations(&self) -> Vec<Array3<f64>> {
        match self {
            Self::Wildlife(s) => s.observations(),
            Self::Traffic(s) => s.observations(),
        }
    }

    pub fn graph(&self, aggregation: crate::mpn::Aggregation) -> CommGraph {
        match self {
            Self::Wildlife(s) => s.graph(aggregation),
            Self::Traffic(_) => traffic::traffic_graph(aggregation),
        }
    }

    /// One transition with explicit randomness; returns `(reward, done)`.
    pub fn step_with_noise(&mut self, config: &EnvConfig, actions: &[usize], noise: &Noise) -> Result<(f64, bool), EnvError> {
        match (self, config, noise) {
            (Self::Wildlife(s), EnvConfig::Wildlife(c), Noise::Wildlife(p)) => {
                let o = s.step(actions, *p, c)?;
                Ok((o.reward, o.done))
            }
            (Self::Traffic(s), EnvConfig::Traffic(c), Noise::Traffic(u)) => {
                let o = s.step(actions, u, c)?;
                Ok((o.reward, o.done))
            }
            _ => Err(EnvError::Config("state, config and noise are for different environments".into())),
        }
    }

    fn is_done(&self, config: &EnvConfig) -> bool {
        match (self, config) {
            (Self::Wildlife(s), EnvConfig::Wildlife(c)) => s.trapped || s.step >= c.max_steps,
            (Self::Traffic(s), EnvConfig::Traffic(c)) => s.is_done(c),
            _ => true,
        }
    }
}

/// Counts of symmetry violations found by [`symmetry_oracle`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub samples: usize,
    pub reward_violations: usize,
    pub transition_violations: usize,
    /// Observations of the transformed state that differ from the transformed observations.
    pub observation_violations: usize,
    /// Communication graphs of the transformed state that differ from the transformed graph.
    pub graph_violations: usize,
}

impl SymmetryReport {
    pub fn total_violations(&self) -> usize {
        self.reward_violations + self.transition_violations + self.observation_violations + self.graph_violations
    }
}

fn random_noise<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Noise {
    match config {
        EnvConfig::Wildlife(_) => Noise::Wildlife(rng.random_range(0..wildlife::DRONE_ACTIONS)),
        EnvConfig::Traffic(_) => Noise::Traffic(traffic::TrafficEnv::sample_noise(rng)),
    }
}

fn random_actions<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Vec<usize> {
    (0..config.num_agents()).map(|_| rng.random_range(0..config.num_actions())).collect()
}

fn fresh_state<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<GlobalState, EnvError> {
    Ok(match config {
        EnvConfig::Wildlife(c) => GlobalState::Wildlife(WildlifeState::random(c, rng)?),
        EnvConfig::Traffic(_) => GlobalState::Traffic(TrafficState::new()),
    })
}

/// Samples reachable states by random play, then for random joint actions and
/// group elements checks that `R(s, a) = R(gs, ga)` and that stepping `(gs, ga)`
/// with transformed randomness lands exactly on `g` applied to the next state.
pub fn symmetry_oracle(config: &EnvConfig, num_samples: usize, seed: u64) -> Result<SymmetryReport, EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SymmetryReport::default();
    let max_walk = match config {
        EnvConfig::Wildlife(c) => c.max_steps,
        EnvConfig::Traffic(c) => c.spawn_steps + 50,
    };
    let agg = crate::mpn::Aggregation::Mean;
    while report.samples < num_samples {
        let mut s = fresh_state(config, &mut rng)?;
        let walk = rng.random_range(0..max_walk);
        for _ in 0..walk {
            if s.is_done(config) {
                break;
            }
            let a = random_actions(config, &mut rng);
            let z = random_noise(config, &mut rng);
            s.step_with_noise(config, &a, &z)?;
        }
        if s.is_done(config) {
            continue;
        }
        let g = rng.random_range(0..4);
        let sym = GlobalSymmetryAction::new(config, g);
        let a = random_actions(config, &mut rng);
        let z = random_noise(config, &mut rng);
        let gs = sym.transform_state(&s);
        if gs.observations() != sym.transform_observations(&s.observations()) {
            report.observation_violations += 1;
        }
        if gs.graph(agg) != sym.transform_graph(&s.graph(agg)) {
            report.graph_violations += 1;
        }
        let mut next = s.clone();
        let (r, done) = next.step_with_noise(config, &a, &z)?;
        let mut gnext = gs;
        let (gr, gdone) = gnext.step_with_noise(config, &sym.transform_actions(&a), &sym.transform_noise(&z))?;
        if r.to_bits() != gr.to_bits() {
            report.reward_violations += 1;
        }
        if sym.transform_state(&next) != gnext || done != gdone {
            report.transition_violations += 1;
        }
        report.samples += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TrafficConfig, WildlifeConfig};

    #[test]
    fn identity_changes_nothing() {
        let cfg = EnvConfig::Wildlife(WildlifeConfig::default());
        let sym = GlobalSymmetryAction::new(&cfg, 0);
        assert_eq!(sym.transform_actions(&[0, 1, 4]), vec![0, 1, 4]);
        assert_eq!(sym.transform_noise(&Noise::Wildlife(3)), Noise::Wildlife(3));
    }

    #[test]
    fn quarter_turn_maps_east_to_north_and_swaps_phases() {
        let w = GlobalSymmetryAction::new(&EnvConfig::Wildlife(WildlifeConfig::default()), 1);
        assert_eq!(w.transform_actions(&[2, 0, 1]), vec![1, 0, 4]);
        let t = GlobalSymmetryAction::new(&EnvConfig::Traffic(TrafficConfig::default()), 1);
        let a = t.transform_actions(&[0, 0, 0, 0]);
        assert_eq!(a, vec![1, 1, 1, 1]);
        let t2 = GlobalSymmetryAction::new(&EnvConfig::Traffic(TrafficConfig::default()), 2);
        assert_eq!(t2.transform_actions(&[0, 1, 1, 1]), vec![1, 1, 1, 0]);
    }

    #[test]
    fn inverse_restores_state() {
        let cfg = EnvConfig::Wildlife(WildlifeConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = fresh_state(&cfg, &mut rng).unwrap();
        for g in 0..4 {
            let a = GlobalSymmetryAction::new(&cfg, g);
            let b = GlobalSymmetryAction::new(&cfg, (4 - g) % 4);
            assert_eq!(b.transform_state(&a.transform_state(&s)), s);
        }
    }

    #[test]
    fn oracle_finds_no_violations() {
        for cfg in [
            EnvConfig::Wildlife(WildlifeConfig::default()),
            EnvConfig::Traffic(TrafficConfig::default()),
        ] {
            let r = symmetry_oracle(&cfg, 100, 1).unwrap();
            assert_eq!(r.total_violations(), 0, "{r:?}");
        }
    }
}
