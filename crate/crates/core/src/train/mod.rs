//! Centralized training of decentralized policies with PPO, the augmentation
//! baselines, evaluation and the learning-rate sweep.

mod config;
mod eval;
mod gae;
mod optim;
mod ppo;
mod samples;
mod trainer;

use thiserror::Error;

use crate::env::EnvError;
use crate::mpn::MpnError;

pub use config::{Method, PpoConfig, TrainConfig, SWEEP_RATES};
pub use eval::{
    evaluate, final_window_score, lr_sweep, select_rate, setting_name, EvalMetrics, ReferenceRate, SweepReport, SweepRun,
    REFERENCE_BEST_RATES,
};
pub use gae::gae;
pub use optim::{clip_grad_norm, Adam};
pub use ppo::{log_probs, loss_and_grad, LossStats};
pub use samples::{augment_full, augment_stochastic, stack, Sample};
pub use trainer::{
    area_under_curve, greedy_actions, sample_actions, train, train_with_progress, write_curve_csv, CurvePoint, EpisodeStats,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {quantity} at update {update}")]
    NonFinite { update: usize, quantity: &'static str },
    #[error("value loss {value_loss} exceeded the divergence limit at update {update}")]
    Diverged { update: usize, value_loss: f64 },
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mpn(#[from] MpnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 0.5), 2.5);
        assert_eq!(quantile(&d, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }
}
