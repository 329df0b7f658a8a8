//! The two cooperative multi-agent environments and their rotational symmetries.

mod symmetry;
pub mod traffic;
mod trajectory;
pub mod wildlife;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpn::{Aggregation, CommGraph, ConvSpec, MpnConfig, NetworkKind};

pub use symmetry::{symmetry_oracle, GlobalState, GlobalSymmetryAction, Noise, SymmetryReport};
pub use traffic::{TrafficConfig, TrafficEnv, TrafficState};
pub use trajectory::{read_trajectory, TrajectoryRecord, TrajectoryWriter};
pub use wildlife::{WildlifeConfig, WildlifeEnv, WildlifeState};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("episode is over; reset before stepping")]
    EpisodeDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Wildlife,
    Traffic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Wildlife(WildlifeConfig),
    Traffic(TrafficConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::Wildlife(WildlifeConfig::default())
    }
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            Self::Wildlife(_) => EnvKind::Wildlife,
            Self::Traffic(_) => EnvKind::Traffic,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            Self::Wildlife(c) => c.validate(),
            Self::Traffic(c) => c.validate(),
        }
    }

    pub fn num_agents(&self) -> usize {
        match self {
            Self::Wildlife(c) => c.agents,
            Self::Traffic(_) => traffic::LIGHTS,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Self::Wildlife(_) => wildlife::DRONE_ACTIONS,
            Self::Traffic(_) => traffic::LIGHT_ACTIONS,
        }
    }

    /// Permutation of local actions under one counter-clockwise quarter turn.
    pub fn action_generator(&self) -> Vec<usize> {
        match self {
            Self::Wildlife(_) => wildlife::DRONE_ACTION_GENERATOR.to_vec(),
            Self::Traffic(_) => traffic::LIGHT_ACTION_GENERATOR.to_vec(),
        }
    }

    pub fn obs_shape(&self) -> (usize, usize) {
        match self {
            Self::Wildlife(c) => (1, c.obs_size()),
            Self::Traffic(_) => (traffic::OBS_CHANNELS, traffic::OBS_SIZE),
        }
    }

    /// The network used for this environment: a strided 7×7 and a 5×5
    /// convolution, global max pooling and two message passing rounds.
    pub fn network_config(&self, kind: NetworkKind, aggregation: Aggregation, basis_seed: u64) -> MpnConfig {
        let (obs_channels, obs_size) = self.obs_shape();
        MpnConfig {
            kind,
            obs_channels,
            obs_size,
            num_actions: self.num_actions(),
            action_generator: self.action_generator(),
            conv: vec![
                ConvSpec {
                    channels: 16,
                    kernel: 7,
                    stride: 2,
                    padding: 0,
                },
                ConvSpec {
                    channels: 32,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
            ],
            rounds: vec![64, 64],
            aggregation,
            basis_seed,
        }
    }
}

/// Result of a single environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    /// Drones beside the poacher when it was trapped this step.
    pub assisting: Option<usize>,
    /// Mean cumulative wait of vehicles in the system.
    pub mean_wait: Option<f64>,
}

/// Either environment behind one interface.
#[derive(Clone, Debug)]
pub enum Env {
    Wildlife(WildlifeEnv),
    Traffic(TrafficEnv),
}

impl Env {
    pub fn new(config: &EnvConfig, seed: u64) -> Result<Self, EnvError> {
        Ok(match config {
            EnvConfig::Wildlife(c) => Self::Wildlife(WildlifeEnv::new(c.clone(), seed)?),
            EnvConfig::Traffic(c) => Self::Traffic(TrafficEnv::new(c.clone(), seed)?),
        })
    }

    pub fn reset(&mut self) {
        match self {
            Self::Wildlife(e) => e.reset(),
            Self::Traffic(e) => e.reset(),
        }
    }

    pub fn num_agents(&self) -> usize {
        match self {
            Self::Wildlife(e) => e.config().agents,
            Self::Traffic(_) => traffic::LIGHTS,
        }
    }

    pub fn observations(&self) -> Vec<Array3<f64>> {
        match self {
            Self::Wildlife(e) => e.state().observations(),
            Self::Traffic(e) => e.state().observations(),
        }
    }

    pub fn graph(&self, aggregation: Aggregation) -> CommGraph {
        match self {
            Self::Wildlife(e) => e.state().graph(aggregation),
            Self::Traffic(_) => traffic::traffic_graph(aggregation),
        }
    }

    pub fn global_state(&self) -> GlobalState {
        match self {
            Self::Wildlife(e) => GlobalState::Wildlife(e.state().clone()),
            Self::Traffic(e) => GlobalState::Traffic(e.state().clone()),
        }
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        Ok(match self {
            Self::Wildlife(e) => {
                let o = e.step(actions)?;
                StepResult {
                    reward: o.reward,
                    done: o.done,
                    assisting: (o.assisting > 0).then_some(o.assisting),
                    mean_wait: None,
                }
            }
            Self::Traffic(e) => {
                let o = e.step(actions)?;
                StepResult {
                    reward: o.reward,
                    done: o.done,
                    assisting: None,
                    mean_wait: Some(o.mean_wait),
                }
            }
        })
    }

    /// Mean cumulative wait over every vehicle that entered this episode, for traffic.
    pub fn episode_mean_wait(&self) -> Option<f64> {
        match self {
            Self::Wildlife(_) => None,
            Self::Traffic(e) => {
                let s = e.state();
                let total = s.exited_wait + s.vehicles.iter().map(|v| v.wait).sum::<u64>();
                let count = s.exited + s.vehicles.len();
                Some(if count == 0 { 0.0 } else { total as f64 / count as f64 })
            }
        }
    }
}
