//! Policy evaluation and the learning-rate sweep.

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{Env, EnvConfig};
use crate::mpn::{Aggregation, MpnPolicy};

use super::trainer::{greedy_actions, sample_actions, stream, train, CurvePoint, EpisodeStats};
use super::{Method, TrainConfig, TrainError};

const STREAM_EVAL: u64 = 11;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub episodes: Vec<EpisodeStats>,
    pub mean_return: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub mean_wait_time: Option<f64>,
}

/// Runs `episodes` full episodes, sampling actions unless `greedy`.
pub fn evaluate(
    policy: &MpnPolicy,
    env_config: &EnvConfig,
    aggregation: Aggregation,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalMetrics, TrainError> {
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut env = Env::new(env_config, seed)?;
    let mut rng = stream(seed, STREAM_EVAL);
    let mut stats = Vec::with_capacity(episodes);
    let mut step = 0;
    while stats.len() < episodes {
        env.reset();
        let mut ret = 0.0;
        loop {
            let joint = policy.forward(&env.observations(), &env.graph(aggregation))?;
            let actions = if greedy { greedy_actions(&joint) } else { sample_actions(&joint, &mut rng) };
            let out = env.step(&actions)?;
            step += 1;
            ret += out.reward;
            if out.done {
                break;
            }
        }
        stats.push(EpisodeStats {
            end_step: step,
            ret,
            mean_wait: env.episode_mean_wait(),
        });
    }
    let p = CurvePoint::from_episodes(step, &stats).expect("at least one episode");
    Ok(EvalMetrics {
        episodes: stats,
        mean_return: p.mean_return,
        q25: p.q25,
        q50: p.q50,
        q75: p.q75,
        mean_wait_time: p.mean_wait_time,
    })
}

/// Best rates found at full scale, kept for comparison only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceRate {
    pub setting: &'static str,
    pub standard_mpn: f64,
    pub augmented_mpn: f64,
    pub equivariant_mpn: f64,
}

pub const REFERENCE_BEST_RATES: [ReferenceRate; 3] = [
    ReferenceRate {
        setting: "Drones, 3 agents",
        standard_mpn: 0.001,
        augmented_mpn: 0.0003,
        equivariant_mpn: 0.001,
    },
    ReferenceRate {
        setting: "Drones, 4 agents",
        standard_mpn: 0.0003,
        augmented_mpn: 0.001,
        equivariant_mpn: 0.001,
    },
    ReferenceRate {
        setting: "Traffic, 4 agents",
        standard_mpn: 0.0001,
        augmented_mpn: 0.0001,
        equivariant_mpn: 0.0001,
    },
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRun {
    pub method: Method,
    pub learning_rate: f64,
    pub seed: u64,
    /// Mean return over the final curve window.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub setting: String,
    pub runs: Vec<SweepRun>,
    /// Selected rate per method, in the order methods were given.
    pub best: Vec<(Method, f64)>,
    pub reference: Vec<ReferenceRate>,
}

impl SweepReport {
    /// One row per setting, one column per method, entries the best rate.
    pub fn table(&self) -> String {
        let mut s = String::from("| Setting |");
        for (m, _) in &self.best {
            s += &format!(" {m} |");
        }
        s += "\n|---|";
        for _ in &self.best {
            s += "---|";
        }
        s += &format!("\n| {} |", self.setting);
        for (_, lr) in &self.best {
            s += &format!(" {lr} |");
        }
        s.push('\n');
        s
    }
}

/// Human-readable name of a configuration's setting.
pub fn setting_name(env: &EnvConfig) -> String {
    match env {
        EnvConfig::Wildlife(c) => format!("Drones, {} agents", c.agents),
        EnvConfig::Traffic(_) => "Traffic, 4 agents".to_string(),
    }
}

/// Mean return over the last `window` curve points (or all, if fewer).
pub fn final_window_score(curve: &[CurvePoint], window: usize) -> f64 {
    let tail = &curve[curve.len().saturating_sub(window.max(1))..];
    if tail.is_empty() {
        return f64::NEG_INFINITY;
    }
    tail.iter().map(|p| p.mean_return).sum::<f64>() / tail.len() as f64
}

/// Picks the rate with the highest mean score; the lower rate wins ties.
pub fn select_rate(scores: &[(f64, f64)]) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .into_iter()
        .fold(None, |best: Option<(f64, f64)>, (lr, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((lr, s)),
        })
        .map(|(lr, _)| lr)
}

/// Trains every (method, rate, seed) combination from `base` on up to
/// `threads` workers and selects a rate per method by mean final-window
/// return. Runs are independent and individually seeded, so the report does
/// not depend on the number of workers.
pub fn lr_sweep(
    base: &TrainConfig,
    methods: &[Method],
    rates: &[f64],
    seeds: &[u64],
    window: usize,
    threads: usize,
) -> Result<SweepReport, TrainError> {
    if rates.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("sweep needs at least one method, rate and seed".into()));
    }
    let jobs: Vec<TrainConfig> = methods
        .iter()
        .flat_map(|&method| {
            rates.iter().flat_map(move |&lr| {
                seeds.iter().map(move |&seed| {
                    let mut c = base.clone();
                    c.method = method;
                    c.learning_rate = lr;
                    c.seed = seed;
                    c
                })
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
    let scores: Vec<Result<f64, TrainError>> = pool.install(|| {
        jobs.par_iter()
            .map(|c| Ok(final_window_score(&train(c)?.curve, window)))
            .collect()
    });
    let mut runs = Vec::with_capacity(jobs.len());
    for (c, score) in jobs.iter().zip(scores) {
        runs.push(SweepRun {
            method: c.method,
            learning_rate: c.learning_rate,
            seed: c.seed,
            score: score?,
        });
    }
    let best = methods
        .iter()
        .map(|&m| {
            let per_rate: Vec<(f64, f64)> = rates
                .iter()
                .map(|&lr| {
                    let s: Vec<f64> = runs.iter().filter(|r| r.method == m && r.learning_rate == lr).map(|r| r.score).collect();
                    (lr, s.iter().sum::<f64>() / s.len() as f64)
                })
                .collect();
            (m, select_rate(&per_rate).expect("non-empty rate set"))
        })
        .collect();
    Ok(SweepReport {
        setting: setting_name(&base.env),
        runs,
        best,
        reference: REFERENCE_BEST_RATES.to_vec(),
    })
}
