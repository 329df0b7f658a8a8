//! Training run configuration.

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::mpn::{Aggregation, NetworkKind};

use super::TrainError;

/// Learning rates tried by the sweep.
pub const SWEEP_RATES: [f64; 6] = [0.001, 0.003, 0.0001, 0.0003, 0.00001, 0.00003];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Equivariant message passing network.
    Equivariant,
    /// Unconstrained message passing network.
    StandardMpn,
    /// Standard network, each sample transformed by one random group element.
    AugStochastic,
    /// Standard network, each sample replaced by its whole orbit.
    AugFull,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Equivariant, Method::StandardMpn, Method::AugStochastic, Method::AugFull];

    pub fn network_kind(self) -> NetworkKind {
        match self {
            Self::Equivariant => NetworkKind::Equivariant,
            _ => NetworkKind::Standard,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Equivariant => "equivariant",
            Self::StandardMpn => "standard_mpn",
            Self::AugStochastic => "aug_stochastic",
            Self::AugFull => "aug_full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_weight: f64,
    pub entropy_weight: f64,
    /// Environment steps collected between updates.
    pub rollout_steps: usize,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    /// Abort when the value loss exceeds this.
    pub value_loss_limit: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_weight: 0.5,
            entropy_weight: 0.01,
            rollout_steps: 512,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
            value_loss_limit: 1e8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub method: Method,
    pub learning_rate: f64,
    pub total_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ppo: PpoConfig,
    /// Environment steps per learning-curve point.
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Seed for the random projections that build equivariant bases.
    #[serde(default)]
    pub basis_seed: u64,
    /// Accept a learning rate outside the sweep set.
    #[serde(default)]
    pub lr_override: bool,
}

fn default_log_interval() -> usize {
    5000
}

impl TrainConfig {
    pub fn new(env: EnvConfig, method: Method, learning_rate: f64, total_steps: usize, seed: u64) -> Self {
        Self {
            env,
            method,
            learning_rate,
            total_steps,
            seed,
            ppo: PpoConfig::default(),
            log_interval: default_log_interval(),
            aggregation: Aggregation::Mean,
            basis_seed: 0,
            lr_override: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let c: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.env.validate().map_err(|e| TrainError::Config(format!("env: {e}")))?;
        let p = &self.ppo;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !self.lr_override && self.learning_rate != 0.0 && !SWEEP_RATES.contains(&self.learning_rate) {
            return bad(format!(
                "learning_rate {} is not in the sweep set {SWEEP_RATES:?}; set lr_override to use it",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&p.gamma) {
            return bad(format!("ppo.gamma must lie in [0, 1], got {}", p.gamma));
        }
        if !(0.0..=1.0).contains(&p.gae_lambda) {
            return bad(format!("ppo.gae_lambda must lie in [0, 1], got {}", p.gae_lambda));
        }
        if p.clip.is_nan() || p.clip <= 0.0 {
            return bad("ppo.clip must be positive".into());
        }
        if p.epochs == 0 || p.minibatch == 0 || p.rollout_steps == 0 {
            return bad("ppo.epochs, ppo.minibatch and ppo.rollout_steps must be positive".into());
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive".into());
        }
        Ok(())
    }
}
