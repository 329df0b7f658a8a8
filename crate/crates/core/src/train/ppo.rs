//! Clipped-surrogate loss and its gradient with respect to all coefficients.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::mpn::{MpnError, MpnPolicy};

use super::samples::{stack, stacked_actions, stacked_old_log_probs, Sample};
use super::PpoConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Fraction of agent decisions whose ratio was clipped.
    pub clip_fraction: f64,
}

fn log_softmax_row(z: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Per-agent log-probabilities of the stored actions under `policy`.
pub fn log_probs(policy: &MpnPolicy, samples: &[&Sample]) -> Result<Vec<Vec<f64>>, MpnError> {
    let (obs, graph) = stack(samples);
    let out = policy.forward_batch(obs.view(), &graph)?;
    let actions = stacked_actions(samples);
    let mut row = 0;
    Ok(samples
        .iter()
        .map(|s| {
            (0..s.num_agents())
                .map(|_| {
                    let lp = log_softmax_row(out.logits.row(row))[actions[row]];
                    row += 1;
                    lp
                })
                .collect()
        })
        .collect())
}

/// PPO loss over a minibatch.
///
/// Every agent's decision gets its own clipped ratio against the shared team
/// advantage; the critic is the mean of the agents' values. Terms are
/// averaged over all agent decisions (policy, entropy) or samples (value).
pub fn loss_and_grad(policy: &MpnPolicy, samples: &[&Sample], cfg: &PpoConfig) -> Result<(LossStats, Vec<f64>), MpnError> {
    let (obs, graph) = stack(samples);
    let out = policy.forward_batch(obs.view(), &graph)?;
    let actions = stacked_actions(samples);
    let old = stacked_old_log_probs(samples);
    let rows = actions.len();
    let na = out.logits.ncols();
    let mut dlogits = Array2::zeros((rows, na));
    let mut dvalues = Array1::zeros(rows);
    let mut stats = LossStats::default();
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
    let decisions = rows as f64;
    let mut row = 0;
    for s in samples {
        let n = s.num_agents();
        let mut v = 0.0;
        for k in 0..n {
            v += out.values[row + k];
        }
        v /= n as f64;
        let dv = v - s.value_target;
        stats.value += cfg.value_weight * dv * dv;
        for k in 0..n {
            dvalues[row + k] = cfg.value_weight * 2.0 * dv / (n as f64 * samples.len() as f64);
        }
        for _ in 0..n {
            let lp = log_softmax_row(out.logits.row(row));
            let p: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
            let a = actions[row];
            let ratio = (lp[a] - old[row]).exp();
            let adv = s.advantage;
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(lo, hi) * adv;
            stats.policy -= unclipped.min(clipped);
            let active = unclipped <= clipped;
            if !active {
                stats.clip_fraction += 1.0;
            }
            let h: f64 = -p.iter().zip(&lp).map(|(pi, li)| pi * li).sum::<f64>();
            stats.entropy += h;
            // d(−surrogate)/d log π(a), then through the softmax
            let g = if active { -unclipped / decisions } else { 0.0 };
            for j in 0..na {
                let onehot = if j == a { 1.0 } else { 0.0 };
                let mut d = g * (onehot - p[j]);
                // −w·H contributes w·p_j (log p_j + H)
                d += cfg.entropy_weight / decisions * p[j] * (lp[j] + h);
                dlogits[[row, j]] = d;
            }
            row += 1;
        }
    }
    stats.policy /= decisions;
    stats.entropy /= decisions;
    stats.clip_fraction /= decisions;
    stats.value /= samples.len() as f64;
    stats.total = stats.policy + stats.value - cfg.entropy_weight * stats.entropy;
    let grad = policy.backward_batch(&out.cache, &graph, dlogits.view(), dvalues.view());
    Ok((stats, grad))
}
