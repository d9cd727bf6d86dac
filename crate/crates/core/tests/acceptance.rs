//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Training runs are cached under `$NMRL_ACCEPTANCE_DIR` (default: the
//! cargo target tmpdir) and reused when the saved config matches. Delete the
//! directory to retrain from scratch. Expect roughly an hour on one core for
//! a cold run.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use common::{check_grads, random_array, rng};
use nmrl::analysis::{build_heatmaps, linear_cka, CkaMatrix};
use nmrl::autodiff::{grad, Array, GradRecord, Tensor};
use nmrl::config::RunConfig;
use nmrl::envs::ctgraph::{CtGraph, CtGraphConfig, CtGraphEnv, CtGraphTask};
use nmrl::envs::nav2d::{reward, Nav2dConfig, Nav2dEnv, Nav2dTask, MAX_SPEED};
use nmrl::envs::Action;
use nmrl::experiment::{
    analyze_checkpoint, load_checkpoint, spn_large_config, test_checkpoint, train, Checkpoint,
    TestOptions,
};
use nmrl::layers::{
    linear_forward, nm_forward, policy_forward, Actions, GateMode, Head, LayerKind, Linear,
    Network, NmLinear, PolicySpec,
};
use nmrl::meta::inner_adapt;
use rand::Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const CT_SHORT_ITERS: usize = 150;
const NAV_ITERS: usize = 100;
/// Pre-adaptation sampling credit used for the CT-graph runs. Without it the
/// pre-adaptation policy often collapses onto one branch and adaptation has
/// nothing left to explore.
const CT_EXPLORATION_WEIGHT: f64 = 5.0;

struct Harness {
    dir: PathBuf,
    workers: usize,
    failures: usize,
}

impl Harness {
    fn verdict(&mut self, n: usize, ok: bool, detail: &str) {
        if !ok {
            self.failures += 1;
        }
        println!("criterion {n}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn config(&self, name: &str, body: &str) -> RunConfig {
        let out = self.dir.join(name);
        let text = format!("output_dir = \"{}\"\n{body}", out.display());
        RunConfig::from_toml(&text).expect("acceptance configs are valid")
    }

    /// Best checkpoint of `config`, training only when no matching run exists.
    fn trained(&self, config: &RunConfig) -> Checkpoint {
        let out = config.resolved_output_dir();
        let best = out.join("best.nmrl");
        let saved = fs::read_to_string(out.join("config.toml")).ok();
        if !(best.exists() && out.join("final.nmrl").exists() && saved == Some(config.to_toml())) {
            let t = Instant::now();
            train(config, self.workers).expect("training succeeds");
            eprintln!("  trained {} in {:.0}s", out.display(), t.elapsed().as_secs_f64());
        }
        load_checkpoint(&best).expect("checkpoint loads")
    }

    fn curve(&self, ckpt: &Checkpoint) -> Vec<f64> {
        let options = TestOptions {
            workers: self.workers,
            ..TestOptions::default()
        };
        test_checkpoint(ckpt, options).expect("meta-test succeeds").curve
    }
}

fn ct_body(kind: &str, seed: u64, iters: Option<usize>) -> String {
    let mut s = format!(
        "seed = {seed}\n[env]\nname = \"ctgraph\"\n[policy]\nlayer_kind = \"{kind}\"\n\
         [meta]\nexploration_weight = {CT_EXPLORATION_WEIGHT:?}\n"
    );
    if let Some(n) = iters {
        s.push_str(&format!("n_iterations = {n}\n"));
    }
    s
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1).max(1) as f64).sqrt()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_1(h: &mut Harness) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut errors = Vec::new();
    let mut record = |name: &str, r: Result<f64, String>| match r {
        Ok(e) => worst = worst.max(e),
        Err(e) => errors.push(format!("{name}: {e}")),
    };
    let mut r = rng(1);
    let out_w = Tensor::constant(random_array(&mut r, &[5, 4], -1.0, 1.0));

    let lin = [
        random_array(&mut r, &[5, 3], -1.0, 1.0),
        random_array(&mut r, &[4, 3], -1.0, 1.0),
        random_array(&mut r, &[4], -1.0, 1.0),
    ];
    record(
        "linear",
        check_grads(&lin, |v| {
            let p = Linear { weight: v[1].clone(), bias: v[2].clone() };
            linear_forward(&v[0], &p).unwrap().mul(&out_w).unwrap().sum()
        }, 1e-4),
    );

    let nm = [
        random_array(&mut r, &[5, 3], -1.0, 1.0),
        random_array(&mut r, &[4, 3], -1.0, 1.0),
        random_array(&mut r, &[4], -1.0, 1.0),
        random_array(&mut r, &[2, 3], -1.0, 1.0),
        random_array(&mut r, &[2], -0.2, 1.0),
        random_array(&mut r, &[4, 2], -1.5, 1.5),
        random_array(&mut r, &[4], -0.5, 0.5),
    ];
    record(
        "neuromodulated layer",
        check_grads(&nm, |v| {
            let p = NmLinear {
                standard: Linear { weight: v[1].clone(), bias: v[2].clone() },
                modulator_in: Linear { weight: v[3].clone(), bias: v[4].clone() },
                modulator_out: Linear { weight: v[5].clone(), bias: v[6].clone() },
                gate: GateMode::Magnitude,
            };
            nm_forward(&v[0], &p).unwrap().mul(&out_w).unwrap().sum()
        }, 1e-4),
    );

    for (name, head, input_dim, actions) in [
        ("categorical policy", Head::Categorical { n_actions: 3 }, 4, Actions::Discrete(vec![0, 2, 1, 1, 0, 2])),
        (
            "gaussian policy",
            Head::Gaussian { action_dim: 2 },
            2,
            Actions::Continuous(random_array(&mut r, &[6, 2], -0.3, 0.3)),
        ),
    ] {
        let spec = PolicySpec {
            input_dim,
            context_dim: 3,
            hidden_sizes: vec![6, 5],
            nm_sizes: vec![2, 3],
            layer_kind: LayerKind::Neuromodulated,
            gate_mode: GateMode::Magnitude,
            head,
        };
        let theta = Network::init(&spec, &mut r).unwrap();
        let mut inputs: Vec<Array> = theta
            .tensors()
            .into_iter()
            .map(|a| a.zip_map(&random_array(&mut r, a.shape(), -0.3, 0.3), |x, e| x + e))
            .collect();
        let n = inputs.len();
        inputs.push(random_array(&mut r, &[3], -0.5, 0.5));
        let obs = Tensor::constant(random_array(&mut r, &[6, input_dim], -1.0, 1.0));
        let w = Tensor::constant(random_array(&mut r, &[6], -1.0, 1.0));
        record(
            name,
            check_grads(&inputs, |v| {
                let net = theta.with_values(v[..n].to_vec());
                let out = policy_forward(&obs, &v[n], &net, &spec).unwrap();
                out.dist.log_prob(&actions).unwrap().mul(&w).unwrap().sum()
            }, 1e-4),
        );
    }

    // Quadratic toy: inner ½Σa(φ−θ)², outer ½Σb(φ₁−c)², one step of size α.
    let k = 6;
    let theta0 = random_array(&mut r, &[k], -1.0, 1.0);
    let phi0 = random_array(&mut r, &[k], -1.0, 1.0);
    let a = random_array(&mut r, &[k], 0.5, 2.0);
    let b = random_array(&mut r, &[k], 0.5, 2.0);
    let c = random_array(&mut r, &[k], -1.0, 1.0);
    let alpha = 0.3;
    let rec = GradRecord::new();
    let th = rec.var(theta0.clone());
    let p0 = rec.var(phi0.clone());
    let (at, bt, ct) = (Tensor::constant(a.clone()), Tensor::constant(b.clone()), Tensor::constant(c.clone()));
    let p1 = inner_adapt(&p0, alpha, 1, true, |p| Ok(p.sub(&th)?.square().mul(&at)?.sum().scale(0.5))).unwrap();
    let outer = p1.sub(&ct).unwrap().square().mul(&bt).unwrap().sum().scale(0.5);
    let g = grad(&outer, &[&th], false).unwrap().remove(0);
    let mut quad_err: f64 = 0.0;
    for i in 0..k {
        let (ai, bi) = (a.data()[i], b.data()[i]);
        let phi1 = phi0.data()[i] - alpha * ai * (phi0.data()[i] - theta0.data()[i]);
        let expected = alpha * ai * bi * (phi1 - c.data()[i]);
        let got = g.value().data()[i];
        quad_err = quad_err.max((got - expected).abs() / (expected.abs() + 1e-12));
    }

    let secs = t.elapsed().as_secs_f64();
    let ok = errors.is_empty() && quad_err < 1e-6 && secs < 60.0;
    let detail = format!(
        "finite differences worst relative error {worst:.2e} (tol 1e-4), quadratic meta-gradient {quad_err:.2e} (tol 1e-6), {secs:.1}s{}",
        if errors.is_empty() { String::new() } else { format!("; {}", errors.join("; ")) }
    );
    h.verdict(1, ok, &detail);
}

struct CtRuns {
    npn: Vec<Checkpoint>,
    spn: Vec<Checkpoint>,
    npn_short: Vec<Checkpoint>,
    npn_short_step4: Vec<f64>,
}

fn criterion_2(h: &mut Harness) -> CtRuns {
    let step4 = |kind: &str, iters: Option<usize>| {
        let mut ckpts = Vec::new();
        let mut finals = Vec::new();
        for seed in SEEDS {
            let tag = iters.map_or(String::new(), |n| format!("-i{n}"));
            let config = h.config(&format!("ct-{kind}-s{seed}{tag}"), &ct_body(kind, seed, iters));
            let ckpt = h.trained(&config);
            finals.push(h.curve(&ckpt)[4]);
            ckpts.push(ckpt);
        }
        (ckpts, finals)
    };
    let (npn, npn4) = step4("neuromodulated", None);
    let (spn, spn4) = step4("standard", None);
    let (npn_short, npn_s4) = step4("neuromodulated", Some(CT_SHORT_ITERS));
    let (_, spn_s4) = step4("standard", Some(CT_SHORT_ITERS));

    let wins = npn4.iter().zip(&spn4).filter(|(n, s)| n > s).count();
    let full_ok = mean(&npn4) >= 0.75 && mean(&npn4) > mean(&spn4);
    let short_ok = mean(&npn_s4) > mean(&spn_s4);
    let detail = format!(
        "exploration weight {CT_EXPLORATION_WEIGHT}; 500 it step-4 NPN {} mean {:.3} (>= 0.75), SPN {} mean {:.3}, NPN ahead on {wins}/3 seeds; \
         {CT_SHORT_ITERS} it NPN mean {:.3} vs SPN mean {:.3}",
        fmt(&npn4),
        mean(&npn4),
        fmt(&spn4),
        mean(&spn4),
        mean(&npn_s4),
        mean(&spn_s4),
    );
    h.verdict(2, full_ok && short_ok, &detail);
    CtRuns {
        npn,
        spn,
        npn_short,
        npn_short_step4: npn_s4,
    }
}

fn criterion_3(h: &mut Harness) {
    let run = |kind: &str| {
        let mut r0 = Vec::new();
        let mut r4 = Vec::new();
        for seed in SEEDS {
            let body = format!(
                "seed = {seed}\n[env]\nname = \"nav2d\"\n[policy]\nlayer_kind = \"{kind}\"\n[meta]\nn_iterations = {NAV_ITERS}\n"
            );
            let ckpt = h.trained(&h.config(&format!("nav-{kind}-s{seed}"), &body));
            let c = h.curve(&ckpt);
            r0.push(c[0]);
            r4.push(c[4]);
        }
        (r0, r4)
    };
    let (n0, n4) = run("neuromodulated");
    let (s0, s4) = run("standard");
    let halved = |r0: &[f64], r4: &[f64]| r0.iter().zip(r4).all(|(a, b)| b.abs() * 2.0 <= a.abs());
    let both_improve = halved(&n0, &n4) && halved(&s0, &s4);
    let gap = (mean(&n4) - mean(&s4)).abs();
    let spread = sd(&n4) + sd(&s4);
    let detail = format!(
        "{NAV_ITERS} it; NPN step0 {} -> step4 {}; SPN step0 {} -> step4 {}; \
         step-4 gap {gap:.3} vs seed sd sum {spread:.3}",
        fmt(&n0),
        fmt(&n4),
        fmt(&s0),
        fmt(&s4)
    );
    h.verdict(3, both_improve && gap <= spread, &detail);
}

fn hsic_cka(x: &Array, y: &Array) -> f64 {
    let n = x.shape()[0];
    let gram = |m: &Array| {
        let c = m.shape()[1];
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = (0..c).map(|t| m.get2(i, t) * m.get2(j, t)).sum();
            }
        }
        // Double centring H K H.
        let row: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i * n + j]).sum::<f64>() / n as f64).collect();
        let all = row.iter().sum::<f64>() / n as f64;
        (0..n * n).map(|ij| k[ij] - row[ij / n] - row[ij % n] + all).collect::<Vec<f64>>()
    };
    let (kx, ky) = (gram(x), gram(y));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    dot(&kx, &ky) / (dot(&kx, &kx) * dot(&ky, &ky)).sqrt()
}

fn orthogonal(n: usize, r: &mut impl Rng) -> Array {
    let a = random_array(r, &[n, n], -1.0, 1.0);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| a.get2(i, j)).collect();
        for q in &cols {
            let d: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Array::new(vec![n, n], (0..n * n).map(|k| cols[k % n][k / n]).collect()).unwrap()
}

fn step4_offdiag(maps: &[CkaMatrix]) -> f64 {
    let v: Vec<f64> = maps.iter().filter(|m| m.grad_step == 4).map(CkaMatrix::mean_off_diagonal).collect();
    mean(&v)
}

fn criterion_4(h: &mut Harness, runs: &CtRuns) {
    let mut r = rng(4);
    let mut prop_err: f64 = 0.0;
    let mut oracle_err: f64 = 0.0;
    for _ in 0..50 {
        let x = random_array(&mut r, &[10, 4], -1.0, 1.0);
        let y = random_array(&mut r, &[10, 4], -1.0, 1.0);
        let base = linear_cka(&x, &y).unwrap();
        let q = orthogonal(4, &mut r);
        let checks = [
            (linear_cka(&x, &x).unwrap(), 1.0),
            (linear_cka(&y, &x).unwrap(), base),
            (linear_cka(&x.matmul(&q, false, false).unwrap(), &y).unwrap(), base),
            (linear_cka(&x.map(|v| 3.7 * v), &y).unwrap(), base),
        ];
        for (got, want) in checks {
            prop_err = prop_err.max((got - want).abs());
        }
        oracle_err = oracle_err.max((base - hsic_cka(&x, &y)).abs());
    }

    let analyses = |ckpts: &[Checkpoint]| -> Vec<Vec<CkaMatrix>> {
        ckpts.iter().map(|c| analyze_checkpoint(c, h.workers).expect("analysis succeeds")).collect()
    };
    let npn = analyses(&runs.npn);
    let spn = analyses(&runs.spn);
    let mut step0_err: f64 = 0.0;
    for maps in npn.iter().chain(&spn) {
        for m in maps.iter().filter(|m| m.grad_step == 0) {
            step0_err = step0_err.max(m.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max));
        }
    }
    let npn4: Vec<f64> = npn.iter().map(|m| step4_offdiag(m)).collect();
    let spn4: Vec<f64> = spn.iter().map(|m| step4_offdiag(m)).collect();

    // Also the fresh-network step-0 property, independent of training.
    let spec = runs.npn[0].spec.clone();
    let theta = Network::init(&spec, &mut r).unwrap();
    let probes: Vec<Vec<f64>> = (0..11).map(|i| (0..11).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let zero = vec![vec![Array::zeros(&[spec.context_dim])]; 4];
    for m in build_heatmaps(&spec, &theta, &zero, &probes).unwrap() {
        step0_err = step0_err.max(m.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max));
    }

    let ok = prop_err < 1e-9 && oracle_err < 1e-12 && step0_err < 1e-9 && mean(&npn4) < mean(&spn4);
    let detail = format!(
        "invariances {prop_err:.1e} (tol 1e-9), HSIC oracle {oracle_err:.1e} (tol 1e-12), \
         step-0 all-ones {step0_err:.1e}; step-4 mean off-diagonal CKA NPN {} mean {:.3} vs SPN {} mean {:.3}",
        fmt(&npn4),
        mean(&npn4),
        fmt(&spn4),
        mean(&spn4)
    );
    h.verdict(4, ok, &detail);
}

fn criterion_5(h: &mut Harness, runs: &CtRuns) {
    let mut gaps = Vec::new();
    let mut large4 = Vec::new();
    for (seed, npn) in SEEDS.iter().zip(&runs.npn_short) {
        let config = spn_large_config(&npn.config).expect("width matching succeeds");
        let target = npn.spec.param_count();
        let count = config.policy_spec().unwrap().param_count();
        gaps.push(count.abs_diff(target) as f64 / target as f64);
        let ckpt = h.trained(&config);
        assert_eq!(ckpt.config.seed, *seed);
        large4.push(h.curve(&ckpt)[4]);
    }
    let width = runs.npn_short[0].spec.standard_matching(runs.npn_short[0].spec.param_count()).hidden_sizes;
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let ok = max_gap <= 0.02 && mean(&large4) < mean(&runs.npn_short_step4);
    let detail = format!(
        "SPN-large hidden {width:?}, parameter gap {:.2}% (<= 2%); {CT_SHORT_ITERS} it step-4 SPN-large {} mean {:.3} vs NPN mean {:.3}",
        100.0 * max_gap,
        fmt(&large4),
        mean(&large4),
        mean(&runs.npn_short_step4)
    );
    h.verdict(5, ok, &detail);
}

fn criterion_6(h: &mut Harness) {
    let mut problems = Vec::new();
    for depth in 1..=4 {
        let b = 2;
        let g = Arc::new(CtGraph::build(CtGraphConfig { branch: b, depth }).unwrap());
        let n_leaves = b.pow(depth as u32);
        let mut rewarded = std::collections::BTreeSet::new();
        for goal in 0..n_leaves {
            let mut env = CtGraphEnv::new(g.clone(), CtGraphTask { goal_leaf: goal }).unwrap();
            env.reset();
            let mut stack = vec![(env, Vec::new(), 0.0)];
            let mut winners = Vec::new();
            while let Some((e, path, ret)) = stack.pop() {
                for a in 0..=b {
                    let mut next = e.clone();
                    let s = next.step(&Action::Discrete(a)).unwrap();
                    let mut p: Vec<usize> = path.clone();
                    p.push(a);
                    let total: f64 = ret + s.reward;
                    if s.done {
                        if ![-0.01, 0.0, 1.0].contains(&total) {
                            problems.push(format!("d={depth} return {total}"));
                        }
                        if total == 1.0 {
                            winners.push((p, next.node()));
                        }
                    } else {
                        stack.push((next, p, total));
                    }
                }
            }
            if winners.len() != 1 || winners[0].0 != g.path_to(goal) {
                problems.push(format!("d={depth} goal {goal}: {} optimal sequences", winners.len()));
            }
            rewarded.extend(winners.into_iter().map(|w| w.1));
        }
        if rewarded.len() != n_leaves {
            problems.push(format!("d={depth}: {} rewarded leaves", rewarded.len()));
        }
    }

    let mut r = rng(6);
    let mut nav_err: f64 = 0.0;
    let config = Nav2dConfig { horizon: 100, goal_eps: 0.0 };
    for _ in 0..100 {
        let goal = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        let mut env = Nav2dEnv::new(config, Nav2dTask { goal });
        let mut pos = [0.0f64; 2];
        for _ in 0..100 {
            let a = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
            let s = env.step(&Action::Continuous(a.to_vec())).unwrap();
            pos[0] += a[0].clamp(-MAX_SPEED, MAX_SPEED);
            pos[1] += a[1].clamp(-MAX_SPEED, MAX_SPEED);
            let want = -((pos[0] - goal[0]).powi(2) + (pos[1] - goal[1]).powi(2));
            nav_err = nav_err
                .max((s.reward - want).abs())
                .max((s.obs[0] - pos[0]).abs())
                .max((s.obs[1] - pos[1]).abs())
                .max((reward(pos, goal) - want).abs());
        }
    }
    let ok = problems.is_empty() && nav_err < 1e-12;
    let detail = format!(
        "CT-graph b=2 d=1..4 enumeration {}; nav 10^4 transitions max error {nav_err:.1e} (tol 1e-12)",
        if problems.is_empty() { "clean".to_string() } else { problems.join("; ") }
    );
    h.verdict(6, ok, &detail);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_7(h: &mut Harness) {
    let mut same = true;
    let mut files = 0;
    for env in ["name = \"ctgraph\"", "name = \"nav2d\"\nhorizon = 20"] {
        let body = format!(
            "seed = 17\ncheckpoint_every = 3\n[env]\n{env}\n[policy]\nhidden_sizes = [24, 24]\nnm_sizes = [4, 4]\n\
             [meta]\nn_iterations = 6\nmeta_batch_size = 6\nn_traj_train = 5\n"
        );
        let config = h.config("determinism", &body);
        let dir = config.resolved_output_dir();
        let mut snaps = Vec::new();
        for workers in [1, 1, 4] {
            let _ = fs::remove_dir_all(&dir);
            train(&config, workers).expect("training succeeds");
            snaps.push(snapshot(&dir));
        }
        files += snaps[0].len();
        same &= snaps[0] == snaps[1] && snaps[0] == snaps[2];
    }
    let detail = format!("{files} files (logs, periodic/best/final checkpoints) byte-identical across two runs and 1 vs 4 workers");
    h.verdict(7, same, if same { &detail } else { "runs differ" });
}

fn main() {
    let dir = std::env::var_os("NMRL_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    fs::create_dir_all(&dir).expect("acceptance directory");
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut h = Harness { dir, workers, failures: 0 };
    println!("acceptance runs in {}", h.dir.display());

    criterion_1(&mut h);
    let runs = criterion_2(&mut h);
    criterion_3(&mut h);
    criterion_4(&mut h, &runs);
    criterion_5(&mut h, &runs);
    criterion_6(&mut h);
    criterion_7(&mut h);

    println!("{} of 7 criteria passed", 7 - h.failures);
    if h.failures > 0 {
        std::process::exit(1);
    }
}
