//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use equimarl::audit::{distributed_equality, policy_equivariance, sample_states};
use equimarl::env::{
    symmetry_oracle, Env, EnvConfig, EnvKind, TrafficConfig, TrajectoryRecord, TrajectoryWriter, WildlifeConfig,
};
use equimarl::group::{FiniteGroup, Representation};
use equimarl::mpn::{load_checkpoint, save_checkpoint, MpnPolicy, NetworkKind};
use equimarl::runtime::{DistributedRuntime, ExecutionMode};
use equimarl::symmetrizer::{constraint_residual, default_num_samples, exact_constraint_rank, find_basis};
use equimarl::train::{
    lr_sweep, quantile, sample_actions, train_with_progress, write_curve_csv, Method, TrainConfig, TrainError, SWEEP_RATES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::{AuditArgs, BasisArgs, Common, Failure, SimulateArgs, SweepArgs, TrainArgs};

/// Largest total-variation distance tolerated between `π(g·s)` and `g·π(s)`.
const TV_TOLERANCE: f64 = 1e-5;
const LOGIT_TOLERANCE: f64 = 1e-4;

/// Everything needed to reproduce a run, stored next to its outputs.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_path: Option<&'a Path>,
    config: &'a TrainConfig,
    seed: u64,
    version: &'a str,
    out: &'a Path,
}

/// Worker parallelism from `EQUIMARL_THREADS`, defaulting to one.
fn threads() -> Result<usize, Failure> {
    match std::env::var("EQUIMARL_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(anyhow!("EQUIMARL_THREADS must be a positive integer, got {v:?}").into()),
        },
        Err(_) => Ok(1),
    }
}

fn execution_mode() -> Result<ExecutionMode, Failure> {
    Ok(if threads()? > 1 { ExecutionMode::threaded() } else { ExecutionMode::Sequential })
}

fn parse_env_kind(name: &str) -> anyhow::Result<EnvKind> {
    match name {
        "wildlife" => Ok(EnvKind::Wildlife),
        "traffic" => Ok(EnvKind::Traffic),
        _ => bail!("unknown environment {name:?}; expected wildlife or traffic"),
    }
}

fn default_env(kind: EnvKind) -> EnvConfig {
    match kind {
        EnvKind::Wildlife => EnvConfig::Wildlife(WildlifeConfig::default()),
        EnvKind::Traffic => EnvConfig::Traffic(TrafficConfig::default()),
    }
}

fn parse_method(name: &str) -> anyhow::Result<Method> {
    Method::parse(name.trim()).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        anyhow!("unknown method {name:?}; expected one of {}", names.join(", "))
    })
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// The run configuration from `--config` (or defaults for `--env`), with
/// command-line overrides applied and validated.
fn resolve_train_config(c: &Common, steps: Option<usize>) -> Result<TrainConfig, Failure> {
    let mut cfg = match (&c.config, &c.env) {
        (Some(path), _) => {
            let text = read(path)?;
            serde_json::from_str::<TrainConfig>(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        (None, Some(env)) => TrainConfig::new(default_env(parse_env_kind(env)?), Method::Equivariant, 0.001, 100_000, 0),
        (None, None) => return Err(anyhow!("either --config or --env is required").into()),
    };
    if let Some(env) = &c.env {
        let kind = parse_env_kind(env)?;
        if cfg.env.kind() != kind {
            cfg.env = default_env(kind);
        }
    }
    if let Some(m) = &c.method {
        cfg.method = parse_method(m)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// An environment configuration from `--config` (a run or environment
/// config), `--env`, or failing both the observation shape of a checkpoint.
fn resolve_env(c: &Common, policy: Option<&MpnPolicy>, agents: usize) -> Result<EnvConfig, Failure> {
    let env = if let Some(path) = &c.config {
        let value: serde_json::Value = serde_json::from_str(&read(path)?).with_context(|| format!("invalid JSON in {}", path.display()))?;
        if value.get("env").is_some() {
            serde_json::from_value::<TrainConfig>(value)
                .with_context(|| format!("invalid config {}", path.display()))?
                .env
        } else {
            serde_json::from_value::<EnvConfig>(value).with_context(|| format!("invalid environment config {}", path.display()))?
        }
    } else if let Some(name) = &c.env {
        let kind = parse_env_kind(name)?;
        match (kind, policy) {
            (EnvKind::Wildlife, Some(p)) => EnvConfig::Wildlife(WildlifeConfig {
                grid: p.config().obs_size / 3,
                agents,
                ..WildlifeConfig::default()
            }),
            _ => default_env(kind),
        }
    } else if let Some(p) = policy {
        if p.config().obs_channels == 3 {
            default_env(EnvKind::Traffic)
        } else {
            EnvConfig::Wildlife(WildlifeConfig {
                grid: p.config().obs_size / 3,
                agents,
                ..WildlifeConfig::default()
            })
        }
    } else {
        return Err(anyhow!("either --config or --env is required").into());
    };
    env.validate()?;
    if let Some(p) = policy {
        let pc = p.config();
        if env.obs_shape() != (pc.obs_channels, pc.obs_size) || env.num_actions() != pc.num_actions {
            return Err(anyhow!(
                "checkpoint expects {}×{}×{} observations and {} actions; the environment provides {:?} and {}",
                pc.obs_channels,
                pc.obs_size,
                pc.obs_size,
                pc.num_actions,
                env.obs_shape(),
                env.num_actions()
            )
            .into());
        }
    }
    Ok(env)
}

fn out_dir(c: &Common, default: &str) -> anyhow::Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFinite { .. } | TrainError::Diverged { .. } => Failure::Numerical(e.into()),
        other => Failure::Usage(other.into()),
    }
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_train_config(&args.common, args.steps)?;
    let out = out_dir(&args.common, &format!("runs/{}-seed{}", cfg.method, cfg.seed))?;
    write_json(&out.join("config.json"), &cfg)?;
    write_json(
        &out.join("manifest.json"),
        &RunManifest {
            command: "train",
            config_path: args.common.config.as_deref(),
            config: &cfg,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION"),
            out: &out,
        },
    )?;
    log::info!("training {} on {:?} for {} steps", cfg.method, cfg.env.kind(), cfg.total_steps);
    let outcome = train_with_progress(&cfg, |p| {
        log::info!("step {:>8}  return {:>9.4}  ({} episodes)", p.step, p.mean_return, p.episodes);
    })
    .map_err(train_failure)?;
    let csv = fs::File::create(out.join("curve.csv")).context("creating curve.csv")?;
    write_curve_csv(std::io::BufWriter::new(csv), &outcome.curve, cfg.env.kind()).context("writing curve.csv")?;
    save_checkpoint(&outcome.policy, &out.join("checkpoint"))?;
    println!("{}", out.display());
    Ok(())
}

pub fn audit(args: AuditArgs) -> Result<(), Failure> {
    let policy = load_checkpoint(&args.checkpoint).with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let env = resolve_env(&args.common, Some(&policy), args.agents)?;
    let elements: Vec<usize> = match args.group.as_str() {
        "c4" => vec![0, 1, 2, 3],
        "identity" => vec![0],
        g => return Err(anyhow!("unknown group {g:?}; expected c4 or identity").into()),
    };
    if args.samples == 0 {
        return Err(anyhow!("--samples must be positive").into());
    }
    let seed = args.common.seed.unwrap_or(0);
    let aggregation = policy.config().aggregation;
    let kind = policy.config().kind;
    let states = sample_states(&env, args.samples, seed);
    let network = policy_equivariance(&policy, &env, &states, &elements, aggregation)?;
    let environment = symmetry_oracle(&env, args.samples, seed)?;
    let distributed = distributed_equality(Arc::new(policy), &states, aggregation, execution_mode()?)?;

    let network_ok = network.max_tv() < TV_TOLERANCE && network.max_logit_residual() < LOGIT_TOLERANCE;
    let network_required = args.strict || kind == NetworkKind::Equivariant;
    let env_ok = environment.total_violations() == 0;
    let dist_ok = distributed.is_exact();
    let passed = env_ok && dist_ok && (network_ok || !network_required);
    let report = json!({
        "checkpoint": args.checkpoint,
        "network_kind": kind,
        "elements": elements,
        "samples": args.samples,
        "strict": args.strict,
        "thresholds": {"max_tv": TV_TOLERANCE, "max_logit_residual": LOGIT_TOLERANCE},
        "network": {
            "max_tv": network.max_tv(),
            "max_residual": network.max_logit_residual(),
            "per_element": network.per_element,
            "passed": network_ok,
            "enforced": network_required,
        },
        "environment": {"report": environment, "passed": env_ok},
        "distributed": {"report": distributed, "passed": dist_ok},
        "passed": passed,
    });
    if let Some(dir) = &args.common.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("audit.json"), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if passed {
        Ok(())
    } else {
        let mut why = Vec::new();
        if !network_ok && network_required {
            why.push(format!("network equivariance residual {:.3e}", network.max_tv()));
        }
        if !env_ok {
            why.push(format!("{} environment symmetry violations", environment.total_violations()));
        }
        if !dist_ok {
            why.push("decentralized execution differs from the centralized pass".to_string());
        }
        Err(Failure::AuditFailed(why.join("; ")))
    }
}

fn parse_rep(spec: &str, group: &Arc<FiniteGroup>) -> anyhow::Result<Representation> {
    let mut rep: Option<Representation> = None;
    for part in spec.split('+') {
        let r = match part.trim() {
            "trivial" => Representation::trivial(group.clone(), 1),
            "regular" => Representation::regular(group.clone()),
            "rotation" => Representation::rotation(group.clone())?,
            other => bail!("unknown representation {other:?}; expected trivial, regular or rotation"),
        };
        rep = Some(match rep {
            None => r,
            Some(acc) => Representation::direct_sum(&acc, &r)?,
        });
    }
    rep.ok_or_else(|| anyhow!("empty representation"))
}

pub fn basis(args: BasisArgs) -> Result<(), Failure> {
    let spec = args.spec.replace('→', "->");
    let (a, b) = spec
        .split_once("->")
        .ok_or_else(|| anyhow!("expected a pair like regular->regular, got {:?}", args.spec))?;
    let group = Arc::new(FiniteGroup::c4());
    let rep_in = parse_rep(a, &group)?;
    let rep_out = parse_rep(b, &group)?;
    let basis = find_basis(&rep_in, &rep_out, default_num_samples(rep_in.dim(), rep_out.dim()), args.seed)?;
    let oracle = exact_constraint_rank(&rep_in, &rep_out)?;
    println!("{} ({}) -> {} ({})", a.trim(), rep_in.dim(), b.trim(), rep_out.dim());
    println!("rank         {}", basis.rank());
    println!("oracle rank  {oracle}");
    for (k, w) in basis.elements().iter().enumerate() {
        println!("element {k:>3}  constraint residual {:.3e}", constraint_residual(w, &rep_in, &rep_out));
    }
    if basis.rank() != oracle {
        return Err(Failure::AuditFailed(format!("basis rank {} differs from exact rank {oracle}", basis.rank())));
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    if args.episodes == 0 {
        return Err(anyhow!("--episodes must be positive").into());
    }
    let policy = match args.policy.as_str() {
        "random" => None,
        path => Some(load_checkpoint(Path::new(path)).with_context(|| format!("loading checkpoint {path}"))?),
    };
    if args.distributed && policy.is_none() {
        return Err(anyhow!("--distributed needs a checkpoint policy").into());
    }
    let env_cfg = resolve_env(&args.common, policy.as_ref(), args.agents)?;
    let seed = args.common.seed.unwrap_or(0);
    let out = out_dir(&args.common, "simulate")?;
    let policy = policy.map(Arc::new);
    let runtime = match &policy {
        Some(p) if args.distributed => Some(DistributedRuntime::new(Arc::clone(p), execution_mode()?)),
        _ => None,
    };
    let aggregation = policy.as_ref().map(|p| p.config().aggregation).unwrap_or_default();
    let mut env = Env::new(&env_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::new();
    let mut waits = Vec::new();
    let mut mismatches = 0usize;
    let mut decisions = 0usize;
    for episode in 0..args.episodes {
        env.reset();
        let mut writer = TrajectoryWriter::create(&out.join(format!("trajectory_{episode:04}.jsonl")))?;
        let mut ret = 0.0;
        for step in 0.. {
            let actions = match &policy {
                None => (0..env_cfg.num_agents()).map(|_| rng.random_range(0..env_cfg.num_actions())).collect(),
                Some(p) => {
                    let obs = env.observations();
                    let graph = env.graph(aggregation);
                    let central = p.forward(&obs, &graph)?;
                    let joint = match &runtime {
                        Some(rt) => {
                            let (dist, _) = rt.forward(&obs, &graph, step)?;
                            decisions += 1;
                            if dist.logits != central.logits {
                                mismatches += 1;
                            }
                            dist
                        }
                        None => central,
                    };
                    sample_actions(&joint, &mut rng)
                }
            };
            let state = env.global_state();
            let r = env.step(&actions)?;
            ret += r.reward;
            writer.write(&TrajectoryRecord {
                episode,
                step,
                state,
                joint_action: actions,
                reward: r.reward,
                done: r.done,
            })?;
            if r.done {
                break;
            }
        }
        writer.finish()?;
        returns.push(ret);
        if let Some(w) = env.episode_mean_wait() {
            waits.push(w);
        }
    }
    let mut sorted = returns.clone();
    sorted.sort_by(f64::total_cmp);
    let summary = json!({
        "environment": env_cfg,
        "policy": args.policy,
        "episodes": args.episodes,
        "seed": seed,
        "returns": returns,
        "mean_return": returns.iter().sum::<f64>() / returns.len() as f64,
        "q25": quantile(&sorted, 0.25),
        "q50": quantile(&sorted, 0.5),
        "q75": quantile(&sorted, 0.75),
        "mean_wait_time": (!waits.is_empty()).then(|| waits.iter().sum::<f64>() / waits.len() as f64),
        "distributed": args.distributed,
        "distributed_decisions": decisions,
        "distributed_mismatches": mismatches,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if mismatches > 0 {
        return Err(Failure::AuditFailed(format!("{mismatches} decentralized decisions differed from the centralized pass")));
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = resolve_train_config(&args.common, args.steps)?;
    let methods = args.methods.split(',').map(parse_method).collect::<anyhow::Result<Vec<_>>>()?;
    let rates: Vec<f64> = match &args.rates {
        None => SWEEP_RATES.to_vec(),
        Some(s) => s
            .split(',')
            .map(|r| r.trim().parse::<f64>().with_context(|| format!("invalid learning rate {r:?}")))
            .collect::<anyhow::Result<_>>()?,
    };
    if args.seeds == 0 {
        return Err(anyhow!("--seeds must be positive").into());
    }
    let seeds: Vec<u64> = (base.seed..base.seed + args.seeds).collect();
    let mut base = base;
    base.lr_override = true;
    let out = out_dir(&args.common, "sweep")?;
    log::info!("sweeping {} methods × {} rates × {} seeds", methods.len(), rates.len(), seeds.len());
    let report = lr_sweep(&base, &methods, &rates, &seeds, args.window, threads()?).map_err(train_failure)?;
    write_json(&out.join("sweep.json"), &report)?;
    let table = report.table();
    fs::write(out.join("table.md"), &table).context("writing table.md")?;
    print!("{table}");
    Ok(())
}
