//! Rollout collection and the PPO training loop.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{Env, EnvKind};
use crate::mpn::{JointPolicy, MpnPolicy};

use super::gae::gae;
use super::optim::{clip_grad_norm, Adam};
use super::ppo::{log_probs, loss_and_grad, LossStats};
use super::samples::{augment_full, augment_stochastic, Sample};
use super::{quantile, Method, TrainConfig, TrainError};

// independent random streams of one run
const STREAM_ACTIONS: u64 = 1;
const STREAM_ENV: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Undiscounted return and, for traffic, the mean vehicle wait of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpisodeStats {
    /// Environment steps taken when the episode ended.
    pub end_step: usize,
    pub ret: f64,
    pub mean_wait: Option<f64>,
}

/// Statistics of the episodes that finished within one logging window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub mean_wait_time: Option<f64>,
}

impl CurvePoint {
    pub fn from_episodes(step: usize, eps: &[EpisodeStats]) -> Option<Self> {
        if eps.is_empty() {
            return None;
        }
        let mut r: Vec<f64> = eps.iter().map(|e| e.ret).collect();
        r.sort_by(f64::total_cmp);
        let waits: Vec<f64> = eps.iter().filter_map(|e| e.mean_wait).collect();
        Some(Self {
            step,
            episodes: eps.len(),
            mean_return: r.iter().sum::<f64>() / r.len() as f64,
            q25: quantile(&r, 0.25),
            q50: quantile(&r, 0.5),
            q75: quantile(&r, 0.75),
            mean_wait_time: (!waits.is_empty()).then(|| waits.iter().sum::<f64>() / waits.len() as f64),
        })
    }
}

/// Writes the learning curve as CSV; the wait column appears for traffic only.
pub fn write_curve_csv<W: Write>(mut out: W, curve: &[CurvePoint], kind: EnvKind) -> std::io::Result<()> {
    let traffic = kind == EnvKind::Traffic;
    write!(out, "step,mean_return,q25,q50,q75")?;
    if traffic {
        write!(out, ",mean_wait_time")?;
    }
    writeln!(out)?;
    for p in curve {
        write!(out, "{},{},{},{},{}", p.step, p.mean_return, p.q25, p.q50, p.q75)?;
        if traffic {
            write!(out, ",{}", p.mean_wait_time.unwrap_or(f64::NAN))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Area under the learning curve, as the mean of its points' mean returns.
pub fn area_under_curve(curve: &[CurvePoint]) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    curve.iter().map(|p| p.mean_return).sum::<f64>() / curve.len() as f64
}

pub struct TrainOutcome {
    pub policy: MpnPolicy,
    pub curve: Vec<CurvePoint>,
    pub episodes: Vec<EpisodeStats>,
    /// Loss statistics of the last minibatch of every update.
    pub updates: Vec<LossStats>,
}

/// Samples one action per agent from its local distribution.
pub fn sample_actions<R: Rng + ?Sized>(joint: &JointPolicy, rng: &mut R) -> Vec<usize> {
    joint
        .probs
        .iter()
        .map(|p| WeightedIndex::new(p).expect("softmax output is a distribution").sample(rng))
        .collect()
}

pub fn greedy_actions(joint: &JointPolicy) -> Vec<usize> {
    joint
        .probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_progress(config, |_| {})
}

/// Runs PPO for `config.total_steps` environment steps, calling `progress`
/// with every new learning-curve point.
pub fn train_with_progress(config: &TrainConfig, mut progress: impl FnMut(&CurvePoint)) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let p = &config.ppo;
    let net = config.env.network_config(config.method.network_kind(), config.aggregation, config.basis_seed);
    let mut policy = MpnPolicy::new(net, config.seed)?;
    let mut params = policy.params();
    let mut adam = Adam::new(params.len(), config.learning_rate, p.adam_eps);
    let mut env = Env::new(&config.env, stream(config.seed, STREAM_ENV).random())?;
    let mut act_rng = stream(config.seed, STREAM_ACTIONS);
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut aug_rng = stream(config.seed, STREAM_AUGMENT);

    let mut episodes = Vec::new();
    let mut curve = Vec::new();
    let mut updates = Vec::new();
    let mut window_start = 0;
    let mut ep_return = 0.0;
    let mut step = 0;

    while step < config.total_steps {
        let len = p.rollout_steps.min(config.total_steps - step);
        let mut batch = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        let mut values = Vec::with_capacity(len);
        let mut dones = Vec::with_capacity(len);
        for _ in 0..len {
            let obs = env.observations();
            let graph = env.graph(config.aggregation);
            let joint = policy.forward(&obs, &graph)?;
            let actions = sample_actions(&joint, &mut act_rng);
            let old_log_probs = actions.iter().zip(&joint.probs).map(|(&a, pr)| pr[a].ln()).collect();
            let out = env.step(&actions)?;
            step += 1;
            ep_return += out.reward;
            batch.push(Sample {
                observations: obs,
                graph,
                actions,
                old_log_probs,
                advantage: 0.0,
                value_target: 0.0,
            });
            rewards.push(out.reward);
            values.push(mean(&joint.values));
            dones.push(out.done);
            if out.done {
                episodes.push(EpisodeStats {
                    end_step: step,
                    ret: ep_return,
                    mean_wait: env.episode_mean_wait(),
                });
                ep_return = 0.0;
                env.reset();
            }
            if step % config.log_interval == 0 {
                if let Some(pt) = CurvePoint::from_episodes(step, &episodes[window_start..]) {
                    progress(&pt);
                    curve.push(pt);
                }
                window_start = episodes.len();
            }
        }
        let last_value = if *dones.last().expect("non-empty rollout") {
            0.0
        } else {
            mean(&policy.forward(&env.observations(), &env.graph(config.aggregation))?.values)
        };
        let (adv, targets) = gae(&rewards, &values, &dones, last_value, p.gamma, p.gae_lambda);
        let mu = mean(&adv);
        let sd = (adv.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / adv.len() as f64).sqrt();
        for (s, (a, t)) in batch.iter_mut().zip(adv.iter().zip(&targets)) {
            s.advantage = (a - mu) / (sd + 1e-8);
            s.value_target = *t;
        }

        let (batch, minibatch) = match config.method {
            Method::Equivariant | Method::StandardMpn => (batch, p.minibatch),
            Method::AugStochastic => (augment_stochastic(&batch, &config.env, &mut aug_rng).0, p.minibatch),
            // the orbit of every sample is kept, so minibatches grow with it
            Method::AugFull => (augment_full(&batch, &config.env), 4 * p.minibatch),
        };
        let mut batch = batch;
        if matches!(config.method, Method::AugStochastic | Method::AugFull) {
            // the behaviour policy's probabilities of transformed actions in
            // transformed states are only known by re-evaluating it
            for chunk in batch.chunks_mut(minibatch) {
                let refs: Vec<&Sample> = chunk.iter().collect();
                let lps = log_probs(&policy, &refs)?;
                for (s, lp) in chunk.iter_mut().zip(lps) {
                    s.old_log_probs = lp;
                }
            }
        }

        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut last = LossStats::default();
        for _ in 0..p.epochs {
            order.shuffle(&mut shuffle_rng);
            for idx in order.chunks(minibatch) {
                let refs: Vec<&Sample> = idx.iter().map(|&i| &batch[i]).collect();
                let (stats, mut grad) = loss_and_grad(&policy, &refs, p)?;
                let update = updates.len();
                if !stats.total.is_finite() {
                    return Err(TrainError::NonFinite { update, quantity: "loss" });
                }
                if stats.value > p.value_loss_limit {
                    return Err(TrainError::Diverged { update, value_loss: stats.value });
                }
                let norm = clip_grad_norm(&mut grad, p.max_grad_norm);
                if !norm.is_finite() {
                    return Err(TrainError::NonFinite { update, quantity: "gradient" });
                }
                adam.step(&mut params, &grad);
                policy.set_params(&params)?;
                last = stats;
            }
        }
        log::debug!("update {} at step {step}: {last:?}", updates.len());
        updates.push(last);
    }
    Ok(TrainOutcome {
        policy,
        curve,
        episodes,
        updates,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::env::{EnvConfig, WildlifeConfig};

    pub(crate) fn tiny(method: Method, lr: f64, steps: usize) -> TrainConfig {
        let env = EnvConfig::Wildlife(WildlifeConfig {
            grid: 5,
            agents: 2,
            ..WildlifeConfig::default()
        });
        let mut c = TrainConfig::new(env, method, lr, steps, 7);
        c.ppo.rollout_steps = 64;
        c.ppo.minibatch = 32;
        c.ppo.epochs = 2;
        c.log_interval = 64;
        c
    }

    #[test]
    fn zero_learning_rate_leaves_policy_unchanged() {
        let c = tiny(Method::Equivariant, 0.0, 128);
        let before = MpnPolicy::new(c.env.network_config(c.method.network_kind(), c.aggregation, c.basis_seed), c.seed)
            .unwrap()
            .params();
        let out = train(&c).unwrap();
        assert_eq!(out.policy.params(), before);
        assert_eq!(out.updates.len(), 2);
    }

    #[test]
    fn seeded_runs_are_identical() {
        for m in [Method::StandardMpn, Method::AugStochastic] {
            let c = tiny(m, 0.001, 128);
            let a = train(&c).unwrap();
            let b = train(&c).unwrap();
            assert_eq!(a.policy.params(), b.policy.params());
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.episodes, b.episodes);
        }
    }

    #[test]
    fn every_method_trains() {
        for m in Method::ALL {
            let out = train(&tiny(m, 0.0003, 64)).unwrap();
            assert!(out.updates.iter().all(|u| u.total.is_finite()));
        }
    }

    #[test]
    fn curve_csv_has_expected_header() {
        let pts = [CurvePoint::from_episodes(10, &[EpisodeStats { end_step: 5, ret: 1.0, mean_wait: None }]).unwrap()];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &pts, EnvKind::Wildlife).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,mean_return,q25,q50,q75\n10,1,1,1,1\n");
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &pts, EnvKind::Traffic).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,mean_return,q25,q50,q75,mean_wait_time\n"));
    }
}
