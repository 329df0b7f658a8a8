//! Generalized advantage estimation.

/// Advantages and value targets for one rollout.
///
/// `dones[t]` marks that the episode ended after step `t`, so nothing is
/// bootstrapped across it; `last_value` bootstraps the final step otherwise.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "rollout arrays must have equal length");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, live) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (last_value, 1.0)
        } else {
            (values[t + 1], 1.0)
        };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}
