//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Select criteria with `EQUIMARL_ACCEPTANCE=1,2,5`; the default runs all ten.

use std::error::Error;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use equimarl::audit::{distributed_equality, policy_equivariance, random_draw, redraw, sample_states};
use equimarl::env::{symmetry_oracle, Env, EnvConfig, GlobalSymmetryAction, TrafficConfig, WildlifeConfig};
use equimarl::group::{rot90, FiniteGroup, Representation};
use equimarl::mpn::{action_representation, Aggregation, GraphBatch, MpnConfig, MpnPolicy, NetworkKind};
use equimarl::runtime::ExecutionMode;
use equimarl::symmetrizer::{
    constraint_residual, default_num_samples, exact_constraint_rank, find_basis, EquivariantConv, EquivariantLinear,
    Field, FieldType,
};
use equimarl::train::{
    augment_full, augment_stochastic, lr_sweep, train, CurvePoint, Method, Sample, TrainConfig, REFERENCE_BEST_RATES,
    SWEEP_RATES,
};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, Box<dyn Error>>;

fn fail<T>(msg: String) -> Result<T, Box<dyn Error>> {
    Err(msg.into())
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "representation laws", limit: Duration::from_secs(1), run: representation_laws },
    Criterion { id: 2, name: "symmetrizer basis ranks", limit: Duration::from_secs(5), run: symmetrizer_ranks },
    Criterion { id: 3, name: "layer equivariance", limit: Duration::from_secs(30), run: layer_equivariance },
    Criterion { id: 4, name: "global policy equivariance", limit: Duration::from_secs(60), run: global_equivariance },
    Criterion { id: 5, name: "centralized equals distributed", limit: Duration::from_secs(30), run: distributed_exactness },
    Criterion { id: 6, name: "environment symmetry oracle", limit: Duration::from_secs(60), run: environment_symmetry },
    Criterion { id: 7, name: "gradient checks", limit: Duration::from_secs(30), run: gradient_checks },
    Criterion { id: 8, name: "learning-rate sweep table", limit: Duration::from_secs(120), run: sweep_table },
    Criterion { id: 9, name: "scaled-down data-efficiency trend", limit: Duration::from_secs(2 * 3600), run: data_efficiency },
    Criterion { id: 10, name: "augmentation baselines", limit: Duration::from_secs(10), run: augmentation },
];

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("EQUIMARL_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    // Silence the default hook; panics are reported on the criterion line.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| selected.as_ref().is_none_or(|s| s.contains(&c.id))) {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}").into())
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; took {elapsed:.1?}, limit {:?}", c.limit).into()),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {:<34} {detail} [{elapsed:.2?}]", c.id, c.name),
            Err(e) => {
                println!("criterion {:>2} FAIL  {:<34} {e} [{elapsed:.2?}]", c.id, c.name);
                failed.push(c.id);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn c4() -> Arc<FiniteGroup> {
    Arc::new(FiniteGroup::c4())
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn slice_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

fn wildlife(grid: usize, agents: usize) -> EnvConfig {
    EnvConfig::Wildlife(WildlifeConfig { grid, agents, ..WildlifeConfig::default() })
}

fn traffic() -> EnvConfig {
    EnvConfig::Traffic(TrafficConfig::default())
}

// 1 -------------------------------------------------------------------------

fn representation_laws() -> Outcome {
    let g = c4();
    // Quarter turns compose additively modulo four.
    for a in 0..4 {
        for b in 0..4 {
            if g.compose(a, b) != (a + b) % 4 {
                return fail(format!("compose({a}, {b}) = {}", g.compose(a, b)));
            }
        }
    }
    let reg = Representation::regular(g.clone());
    let rot = Representation::rotation(g.clone())?;
    let sum = Representation::direct_sum(&Representation::direct_sum(&rot, &reg)?, &reg)?;
    let reps = [
        ("trivial", Representation::trivial(g.clone(), 1)),
        ("rotation", rot.clone()),
        ("regular", reg.clone()),
        ("drone actions", action_representation(&g, &[0, 2, 3, 4, 1])?),
        ("traffic actions", action_representation(&g, &[1, 0])?),
        ("rotation+regular+regular", sum),
    ];
    let mut worst = 0.0f64;
    for (name, rep) in &reps {
        let eye = Array2::<f64>::eye(rep.dim());
        let mut r = max_abs_diff(rep.matrix(g.identity()), &eye);
        for a in 0..4 {
            for b in 0..4 {
                let lhs = rep.matrix(a).dot(rep.matrix(b));
                r = r.max(max_abs_diff(&lhs, rep.matrix(g.compose(a, b))));
            }
        }
        if r >= 1e-10 {
            return fail(format!("{name}: residual {r:.3e}"));
        }
        worst = worst.max(r);
    }
    Ok(format!("{} representations × 16 pairs, max residual {worst:.1e}", reps.len()))
}

// 2 -------------------------------------------------------------------------

fn symmetrizer_ranks() -> Outcome {
    let g = c4();
    let reg = Representation::regular(g.clone());
    let rot = Representation::rotation(g.clone())?;
    let triv = Representation::trivial(g.clone(), 1);
    let sum = Representation::direct_sum(&Representation::direct_sum(&rot, &reg)?, &reg)?;
    // Character inner products: <reg,reg> = 4, <reg,1> = 1, <rot,reg> = 2,
    // so rotation ⊕ regular ⊕ regular → regular has 2 + 4 + 4.
    let pairs = [
        ("regular→regular", &reg, &reg, 4),
        ("regular→trivial", &reg, &triv, 1),
        ("rotation→regular", &rot, &reg, 2),
        ("(2+4+4)→regular", &sum, &reg, 10),
    ];
    let mut worst = 0.0f64;
    let mut ranks = Vec::new();
    for (name, a, b, expected) in pairs {
        let basis = find_basis(a, b, default_num_samples(a.dim(), b.dim()), 0)?;
        let oracle = exact_constraint_rank(a, b)?;
        if basis.rank() != oracle || oracle != expected {
            return fail(format!("{name}: basis rank {}, exact rank {oracle}, expected {expected}", basis.rank()));
        }
        for w in basis.elements() {
            let r = constraint_residual(&w, a, b);
            if r >= 1e-8 {
                return fail(format!("{name}: constraint residual {r:.3e}"));
            }
            worst = worst.max(r);
        }
        ranks.push(format!("{name}={oracle}"));
    }
    Ok(format!("{}; max residual {worst:.1e}", ranks.join(" ")))
}

// 3 -------------------------------------------------------------------------

/// Rotates a feature map and transforms each pixel's channel vector.
fn transform_map(x: &Array3<f64>, g: usize, channels: Option<&FieldType>) -> Array3<f64> {
    let mut out = rot90(x, g).expect("square map");
    if let Some(ft) = channels {
        let (_, h, w) = out.dim();
        for i in 0..h {
            for j in 0..w {
                let v: Vec<f64> = out.slice(ndarray::s![.., i, j]).to_vec();
                out.slice_mut(ndarray::s![.., i, j]).assign(&Array1::from(ft.transform(g, &v)));
            }
        }
    }
    out
}

fn map_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn regular_channels(copies: usize) -> FieldType {
    FieldType::single(Field::interleaved(Representation::regular(c4()), copies))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn layer_equivariance() -> Outcome {
    const DRAWS: u64 = 100;
    let names = ["lifting conv", "group conv", "encoder", "message", "update", "policy head", "value head"];
    let mut worst = [0.0f64; 7];
    let envs = [wildlife(7, 3), traffic()];
    let templates = envs
        .iter()
        .map(|e| MpnPolicy::new(e.network_config(NetworkKind::Equivariant, Aggregation::Mean, 0), 0))
        .collect::<Result<Vec<_>, _>>()?;
    for draw in 0..DRAWS {
        let env = &envs[(draw % 2) as usize];
        let p = redraw(&templates[(draw % 2) as usize], draw);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let (c, s) = env.obs_shape();
        let obs = Array3::from_shape_fn((c, s, s), |_| rng.random_range(0.0..1.0));
        let conv0 = &p.convs()[0];
        let conv1 = &p.convs()[1];
        let y0 = conv0.forward(&obs)?;
        let hidden = Array3::from_shape_fn(y0.dim(), |_| rng.random_range(-1.0..1.0));
        let y1 = conv1.forward(&hidden)?;
        let t0 = regular_channels(conv0.channels_out());
        let t1 = regular_channels(conv1.channels_out());
        let f = p.encode(&obs)?;
        let ft0 = p.feature_type(0);
        let e = [rng.random_range(-3.0..3.0f64).round(), rng.random_range(-3.0..3.0f64).round()];
        let m = p.message(0, e, &f);
        let mt = p.message_layer(0).out_type().clone();
        let agg = random_vec(&mut rng, p.message_dim(0));
        let u = p.update(0, &f, &agg);
        let last = p.num_rounds();
        let ff = random_vec(&mut rng, p.feature_dim(last));
        let ftl = p.feature_type(last);
        let (logits, value) = p.heads(&ff);
        for g in 0..4 {
            let r = [
                map_diff(&conv0.forward(&transform_map(&obs, g, None))?, &transform_map(&y0, g, Some(&t0))),
                map_diff(&conv1.forward(&transform_map(&hidden, g, Some(&t0)))?, &transform_map(&y1, g, Some(&t1))),
                slice_diff(&p.encode(&rot90(&obs, g)?)?, &ft0.transform(g, &f)),
                {
                    let ge = p.edge_rep().apply(g, &e);
                    slice_diff(&p.message(0, [ge[0], ge[1]], &ft0.transform(g, &f)), &mt.transform(g, &m))
                },
                slice_diff(&p.update(0, &ft0.transform(g, &f), &mt.transform(g, &agg)), &p.feature_type(1).transform(g, &u)),
                {
                    let (gl, _) = p.heads(&ftl.transform(g, &ff));
                    slice_diff(&gl, &p.action_rep().apply(g, &logits))
                },
                (p.heads(&ftl.transform(g, &ff)).1 - value).abs(),
            ];
            for (w, v) in worst.iter_mut().zip(r) {
                *w = w.max(v);
            }
        }
    }
    let summary: Vec<String> = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    if let Some((n, w)) = names.iter().zip(&worst).find(|(_, w)| **w >= 1e-5) {
        return fail(format!("{n} residual {w:.3e}"));
    }
    Ok(format!("{DRAWS} draws; {}", summary.join(", ")))
}

// 4 -------------------------------------------------------------------------

fn global_equivariance() -> Outcome {
    const DRAWS: u64 = 50;
    let shapes = [("drones 7×7/3", wildlife(7, 3)), ("drones 7×7/4", wildlife(7, 4)), ("traffic", traffic())];
    let mut parts = Vec::new();
    for (name, env) in &shapes {
        let states = sample_states(env, DRAWS as usize, 7);
        let (mut eq_worst, mut above) = (0.0f64, 0usize);
        let eq_template = MpnPolicy::new(env.network_config(NetworkKind::Equivariant, Aggregation::Mean, 0), 0)?;
        let st_template = MpnPolicy::new(env.network_config(NetworkKind::Standard, Aggregation::Mean, 0), 0)?;
        for (i, s) in states.iter().enumerate() {
            let seed = 100 + i as u64;
            let states = std::slice::from_ref(s);
            let eq = redraw(&eq_template, seed);
            let r = policy_equivariance(&eq, env, states, &[0, 1, 2, 3], Aggregation::Mean)?;
            eq_worst = eq_worst.max(r.max_tv());
            let st = redraw(&st_template, seed);
            let r = policy_equivariance(&st, env, states, &[0, 1, 2, 3], Aggregation::Mean)?;
            if r.max_tv() > 1e-2 {
                above += 1;
            }
        }
        let frac = above as f64 / DRAWS as f64;
        if eq_worst >= 1e-5 {
            return fail(format!("{name}: equivariant max TV {eq_worst:.3e}"));
        }
        if frac < 0.9 {
            return fail(format!("{name}: standard network above 1e-2 on only {:.0}% of draws", 100.0 * frac));
        }
        parts.push(format!("{name}: eq max TV {eq_worst:.1e}, std >1e-2 on {:.0}%", 100.0 * frac));
    }
    Ok(format!("{DRAWS} draws per shape; {}", parts.join("; ")))
}

// 5 -------------------------------------------------------------------------

fn distributed_exactness() -> Outcome {
    const DRAWS: usize = 100;
    let envs = [wildlife(7, 3), wildlife(7, 4), traffic()];
    let templates = envs
        .iter()
        .map(|e| MpnPolicy::new(e.network_config(NetworkKind::Equivariant, Aggregation::Mean, 0), 0))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut exact, mut messages, mut violations, mut threaded) = (0, 0, 0, 0);
    let mut worst = 0.0f64;
    for draw in 0..DRAWS {
        let env = &envs[draw % envs.len()];
        let state = sample_states(env, 1, 500 + draw as u64);
        let p = Arc::new(redraw(&templates[draw % envs.len()], draw as u64));
        let mode = if draw % 5 == 0 {
            threaded += 1;
            ExecutionMode::threaded()
        } else {
            ExecutionMode::Sequential
        };
        let r = distributed_equality(p, &state, Aggregation::Mean, mode)?;
        exact += r.bitwise_equal;
        messages += r.messages;
        violations += r.isolation_violations;
        worst = worst.max(r.max_abs_diff);
    }
    if exact != DRAWS || violations != 0 {
        return fail(format!("{exact}/{DRAWS} bitwise equal, max diff {worst:.3e}, {violations} out-of-graph flows"));
    }
    if messages == 0 {
        return fail("no messages exchanged; the check is vacuous".into());
    }
    Ok(format!("{exact}/{DRAWS} bitwise equal ({threaded} threaded), {messages} messages audited, 0 violations"))
}

// 6 -------------------------------------------------------------------------

fn environment_symmetry() -> Outcome {
    const SAMPLES: usize = 500;
    let mut parts = Vec::new();
    for (name, env) in [("drones 7×7/3", wildlife(7, 3)), ("drones 5×5/2", wildlife(5, 2)), ("traffic", traffic())] {
        let r = symmetry_oracle(&env, SAMPLES, 11)?;
        if r.samples < SAMPLES || r.total_violations() != 0 {
            return fail(format!("{name}: {r:?}"));
        }
        parts.push(format!("{name} 0/{}", r.samples));
    }
    Ok(format!("reward and transition violations: {}", parts.join(", ")))
}

// 7 -------------------------------------------------------------------------

/// Gradient error relative to the larger magnitude, floored at 1e-3 so that
/// vanishing gradients are compared absolutely.
fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

fn check_linear(layer: &EquivariantLinear, seed: u64) -> f64 {
    let mut l = layer.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((3, l.dim_in()), |_| rng.random_range(-1.0..1.0));
    let t = Array2::from_shape_fn((3, l.dim_out()), |_| rng.random_range(-1.0..1.0));
    let loss = |l: &EquivariantLinear, x: &Array2<f64>| {
        let y = l.forward_batch(x.view());
        (&t * &y * &y).sum() / 2.0
    };
    let y = l.forward_batch(x.view());
    let dy = &t * &y;
    let mut grad = vec![0.0; l.num_coefficients()];
    l.backward_batch(x.view(), dy.view(), &mut grad);
    let c0 = l.coefficients().to_vec();
    let mut worst = 0.0f64;
    for k in 0..c0.len() {
        let mut c = c0.clone();
        c[k] += EPS;
        l.set_coefficients(&c).unwrap();
        let lp = loss(&l, &x);
        c[k] -= 2.0 * EPS;
        l.set_coefficients(&c).unwrap();
        let lm = loss(&l, &x);
        worst = worst.max(rel_err((lp - lm) / (2.0 * EPS), grad[k]));
    }
    worst
}

fn check_conv(conv: &EquivariantConv, size: usize, seed: u64) -> f64 {
    let mut conv = conv.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array4::from_shape_fn((2, conv.in_channels_total(), size, size), |_| rng.random_range(-1.0..1.0));
    let loss = |conv: &EquivariantConv| {
        let (y, _) = conv.forward_batch(x.view()).unwrap();
        y.mapv(|v| v * v).sum() / 2.0
    };
    let (y, cols) = conv.forward_batch(x.view()).unwrap();
    let mut grad = vec![0.0; conv.num_coefficients()];
    conv.backward(&cols, y.view(), &mut grad);
    let c0 = conv.linear().coefficients().to_vec();
    let mut worst = 0.0f64;
    for k in 0..c0.len() {
        let mut c = c0.clone();
        c[k] += EPS;
        conv.linear_mut().set_coefficients(&c).unwrap();
        let lp = loss(&conv);
        c[k] -= 2.0 * EPS;
        conv.linear_mut().set_coefficients(&c).unwrap();
        let lm = loss(&conv);
        worst = worst.max(rel_err((lp - lm) / (2.0 * EPS), grad[k]));
    }
    worst
}

fn check_network(p: &MpnPolicy, seed: u64) -> Result<f64, Box<dyn Error>> {
    let mut p = p.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = p.config().clone();
    let obs = Array4::from_shape_fn((3, cfg.obs_channels, cfg.obs_size, cfg.obs_size), |_| rng.random_range(0.0..1.0));
    let graph = equimarl::mpn::CommGraph::within_radius(vec![[0, 0], [1, 1], [1, 2]], 1, Aggregation::Mean);
    let gb = GraphBatch::from_graphs([&graph]);
    let wl = Array2::from_shape_fn((3, cfg.num_actions), |_| rng.random_range(-1.0..1.0));
    let wv = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
    let loss = |p: &MpnPolicy| {
        let o = p.forward_batch(obs.view(), &gb).unwrap();
        (&o.logits * &wl).sum() + (&o.values * &o.values * &wv).sum()
    };
    let out = p.forward_batch(obs.view(), &gb)?;
    let dv = &out.values * &wv * 2.0;
    let grad = p.backward_batch(&out.cache, &gb, wl.view(), dv.view());
    let theta = p.params();
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] += EPS;
        p.set_params(&t)?;
        let lp = loss(&p);
        t[k] -= 2.0 * EPS;
        p.set_params(&t)?;
        let lm = loss(&p);
        worst = worst.max(rel_err((lp - lm) / (2.0 * EPS), grad[k]));
    }
    Ok(worst)
}

const EPS: f64 = 1e-5;

fn small_config(kind: NetworkKind) -> MpnConfig {
    let mut c = wildlife(5, 3).network_config(kind, Aggregation::Mean, 0);
    c.conv[0].channels = 8;
    c.conv[1].channels = 8;
    c.rounds = vec![8, 8];
    c
}

fn gradient_checks() -> Outcome {
    let full = random_draw(wildlife(7, 3).network_config(NetworkKind::Equivariant, Aggregation::Mean, 0), 3)?;
    let tr = random_draw(traffic().network_config(NetworkKind::Equivariant, Aggregation::Mean, 0), 4)?;
    let checks = [
        ("lifting conv", check_conv(&small_net(NetworkKind::Equivariant)?.convs()[0], 9, 1)),
        ("group conv", check_conv(&small_net(NetworkKind::Equivariant)?.convs()[1], 7, 2)),
        ("message", check_linear(full.message_layer(0), 3)),
        ("update", check_linear(full.update_layer(1), 4)),
        ("drone policy head", check_linear(full.policy_head(), 5)),
        ("traffic policy head", check_linear(tr.policy_head(), 6)),
        ("value head", check_linear(full.value_head(), 7)),
        ("equivariant network", check_network(&small_net(NetworkKind::Equivariant)?, 8)?),
        ("standard network", check_network(&small_net(NetworkKind::Standard)?, 9)?),
    ];
    if let Some((n, w)) = checks.iter().find(|(_, w)| *w >= 1e-4) {
        return fail(format!("{n}: relative error {w:.3e}"));
    }
    let worst = checks.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    Ok(format!("{} layer types, eps {EPS:e}, worst relative error {worst:.1e}", checks.len()))
}

fn small_net(kind: NetworkKind) -> Result<MpnPolicy, Box<dyn Error>> {
    Ok(random_draw(small_config(kind), 21)?)
}

// 8 -------------------------------------------------------------------------

fn sweep_table() -> Outcome {
    // The full grid and the reported best rates.
    let mut grid = SWEEP_RATES.to_vec();
    grid.sort_by(f64::total_cmp);
    if grid != [0.00001, 0.00003, 0.0001, 0.0003, 0.001, 0.003] {
        return fail(format!("rate grid {grid:?}"));
    }
    let expected = [
        ("Drones, 3 agents", 0.001, 0.0003, 0.001),
        ("Drones, 4 agents", 0.0003, 0.001, 0.001),
        ("Traffic, 4 agents", 0.0001, 0.0001, 0.0001),
    ];
    for (r, (setting, s, a, e)) in REFERENCE_BEST_RATES.iter().zip(expected) {
        if (r.setting, r.standard_mpn, r.augmented_mpn, r.equivariant_mpn) != (setting, s, a, e) {
            return fail(format!("reference row {r:?}"));
        }
    }
    let mut base = TrainConfig::new(wildlife(5, 2), Method::Equivariant, 0.001, 256, 0);
    base.log_interval = 64;
    base.ppo.rollout_steps = 64;
    base.ppo.minibatch = 32;
    base.ppo.epochs = 1;
    let methods = [Method::StandardMpn, Method::AugStochastic, Method::Equivariant];
    let report = lr_sweep(&base, &methods, &SWEEP_RATES, &[0], 2, 1)?;
    if report.runs.len() != methods.len() * SWEEP_RATES.len() {
        return fail(format!("{} runs", report.runs.len()));
    }
    for (m, (bm, lr)) in methods.iter().zip(&report.best) {
        if m != bm || !SWEEP_RATES.contains(lr) {
            return fail(format!("best entry ({bm}, {lr}) for {m}"));
        }
    }
    let table = report.table();
    let lines: Vec<&str> = table.lines().collect();
    if lines.len() != 3
        || lines[0] != "| Setting | standard_mpn | aug_stochastic | equivariant |"
        || !lines[2].starts_with("| Drones, 2 agents |")
    {
        return fail(format!("table shape:\n{table}"));
    }
    let picks: Vec<String> = report.best.iter().map(|(m, lr)| format!("{m}={lr}")).collect();
    Ok(format!("{} runs, selected {} (reference rates recorded, not asserted)", report.runs.len(), picks.join(" ")))
}

// 9 -------------------------------------------------------------------------

/// Area under the median-return curve, normalised by the number of points.
fn median_auc(curve: &[CurvePoint]) -> f64 {
    curve.iter().map(|p| p.q50).sum::<f64>() / curve.len() as f64
}

fn paired_wins(seeds: std::ops::Range<u64>, cache: &mut Vec<(f64, f64)>) -> Result<usize, Box<dyn Error>> {
    for seed in seeds {
        if cache.len() as u64 > seed {
            continue;
        }
        let mut aucs = [0.0; 2];
        for (i, method) in [Method::Equivariant, Method::StandardMpn].into_iter().enumerate() {
            let cfg = TrainConfig::new(wildlife(5, 2), method, 0.001, 100_000, seed);
            aucs[i] = median_auc(&train(&cfg)?.curve);
        }
        eprintln!("  seed {seed}: equivariant AUC {:.4}, standard AUC {:.4}", aucs[0], aucs[1]);
        cache.push((aucs[0], aucs[1]));
    }
    Ok(cache.iter().filter(|(e, s)| e > s).count())
}

fn data_efficiency() -> Outcome {
    let mut cache = Vec::new();
    let wins = paired_wins(0..5, &mut cache)?;
    if wins >= 4 {
        return Ok(format!("equivariant wins {wins}/5 paired seeds"));
    }
    // Flaky-tolerant: a miss triggers a 10-seed rerun judged at the same rate.
    let wins10 = paired_wins(0..10, &mut cache)?;
    if wins10 >= 8 {
        Ok(format!("equivariant wins {wins}/5, rerun {wins10}/10 paired seeds"))
    } else {
        fail(format!("equivariant wins {wins}/5 and {wins10}/10 paired seeds"))
    }
}

// 10 ------------------------------------------------------------------------

fn env_samples(env: &EnvConfig, n: usize, seed: u64) -> Result<Vec<Sample>, Box<dyn Error>> {
    let mut e = Env::new(env, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let actions: Vec<usize> = (0..env.num_agents()).map(|_| rng.random_range(0..env.num_actions())).collect();
        out.push(Sample {
            observations: e.observations(),
            graph: e.graph(Aggregation::Mean),
            actions: actions.clone(),
            old_log_probs: (0..env.num_agents()).map(|_| rng.random_range(-3.0..0.0)).collect(),
            advantage: rng.random_range(-1.0..1.0),
            value_target: rng.random_range(-1.0..1.0),
        });
        if e.step(&actions)?.done {
            e.reset();
        }
    }
    Ok(out)
}

fn augmentation() -> Outcome {
    let mut checked = 0;
    let mut full_orbits = 0;
    for env in [wildlife(7, 3), traffic()] {
        let batch = env_samples(&env, 64, 5)?;
        let aug = augment_full(&batch, &env);
        if aug.len() != 4 * batch.len() {
            return fail(format!("augment_full produced {} from {}", aug.len(), batch.len()));
        }
        for (i, s) in batch.iter().enumerate() {
            let orbit = &aug[4 * i..4 * i + 4];
            for (g, t) in orbit.iter().enumerate() {
                let sym = GlobalSymmetryAction::new(&env, g);
                let perm = sym.agent_perm();
                // Agent i of the original becomes agent perm[i]; its action is relabelled.
                let mut ok = t.graph == sym.transform_graph(&s.graph)
                    && t.advantage == s.advantage
                    && t.value_target == s.value_target;
                for (a, &to) in perm.iter().enumerate() {
                    ok &= t.actions[to] == sym.action_map()[s.actions[a]];
                    ok &= t.old_log_probs[to] == s.old_log_probs[a];
                    ok &= t.observations[to] == rot90(&s.observations[a], g)?;
                }
                if !ok {
                    return fail(format!("orbit member g{g} of sample {i} has wrong contents"));
                }
            }
            if orbit[0] != *s {
                return fail(format!("orbit of sample {i} does not start with the original"));
            }
            // The orbit has four distinct members unless a non-trivial rotation fixes the state.
            let distinct = (0..4).filter(|&g| (0..g).all(|h| orbit[g].observations != orbit[h].observations)).count();
            let stabilised = orbit[1..].iter().any(|t| t.observations == s.observations);
            if distinct == 4 {
                full_orbits += 1;
            } else if !stabilised || 4 % distinct != 0 {
                return fail(format!("sample {i} has an orbit of size {distinct} without invariance"));
            }
            checked += 1;
        }
    }

    let env = wildlife(5, 2);
    let batch = env_samples(&env, 100, 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0usize; 4];
    for _ in 0..100 {
        let (_, drawn) = augment_stochastic(&batch, &env, &mut rng);
        for g in drawn {
            counts[g] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let expected = n as f64 / 4.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(3.0)?.cdf(stat);
    if n != 10_000 || p <= 0.01 {
        return fail(format!("{n} draws, counts {counts:?}, χ² p = {p:.4}"));
    }
    Ok(format!(
        "{checked} orbits verified ({full_orbits} of size 4); {n} stochastic draws {counts:?}, χ² p = {p:.3}"
    ))
}
