//! Acceptance criteria 1–10. Runs as a plain binary (`harness = false`):
//! one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! `cargo test --release -p mjae-core --test acceptance -- 3 8` runs a subset.

use std::time::{Duration, Instant};

use mjae_core::autodiff::{Tape, Tensor, Var};
use mjae_core::config::Config;
use mjae_core::evalsuite::{self, GaussianToyConfig, SymmetryProbe};
use mjae_core::loss;
use mjae_core::molgraph::MoleculeGraph;
use mjae_core::network::ModelConfig;
use mjae_core::sampling::{self, SamplerConfig};
use mjae_core::schedule::{ComponentSchedules, NoiseSchedule};
use mjae_core::training::{self, TrainConfig};
use mjae_core::{rng, toy, trajectory};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn tensor(shape: &[usize], r: &mut impl Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng::normal(r)).collect()).unwrap()
}

/// Values with |v| ≥ 0.1, away from the kinks of relu/abs and the pole of log.
fn away_from_zero(shape: &[usize], r: &mut impl Rng) -> Tensor {
    tensor(shape, r, 1.0).map(|v| if v.abs() < 0.1 { 0.1f64.copysign(v) + v } else { v })
}

fn positive(shape: &[usize], r: &mut impl Rng) -> Tensor {
    tensor(shape, r, 1.0).map(|v| 0.2 + v.abs())
}

// ------------------------------------------------------------------ 1

/// Closed forms on a softmax table: ∇log p(i,j) = δ − p and
/// ∇log q(i) = [a=i]·p(a,b)/q(i) − p(a,b).
fn closed_form(theta: &Tensor, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let k = theta.shape()[0];
    let m = theta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = theta.data().iter().map(|v| (v - m).exp()).sum();
    let p: Vec<f64> = theta.data().iter().map(|v| (v - m).exp() / z).collect();
    let q: f64 = p[i * k..(i + 1) * k].iter().sum();
    let joint = (0..k * k).map(|c| f64::from(c == i * k + j) - p[c]).collect();
    let marg = (0..k * k).map(|c| if c / k == i { p[c] / q } else { 0.0 } - p[c]).collect();
    (joint, marg)
}

fn decomposition() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut oracle: f64 = 0.0;
    for s in 0..100 {
        let mut r = rng::stream(1, &[s]);
        let theta = tensor(&[5, 5], &mut r, 2.0);
        worst = worst.max(loss::verify_decomposition(&theta).unwrap());
        let (i, j) = (s as usize % 5, (s as usize / 5) % 5);
        let g = loss::decomposition_gradients(&theta, i, j).unwrap();
        let (joint, marg) = closed_form(&theta, i, j);
        for c in 0..25 {
            oracle = oracle.max((g.joint.data()[c] - joint[c]).abs()).max((g.marginal.data()[c] - marg[c]).abs());
        }
    }
    outcome(worst < 1e-10 && oracle < 1e-10, format!("max residual {worst:.2e}, closed-form gap {oracle:.2e}"))
}

// ------------------------------------------------------------------ 2

type Build = for<'t> fn(&'t Tape, &[Var<'t>]) -> Var<'t>;

struct Primitive {
    name: &'static str,
    inputs: fn(&mut rng::StreamRng) -> Vec<Tensor>,
    build: Build,
}

/// Relative error of the tape gradient of `Σ w ⊙ f(x)` against central differences.
fn probe_gradient(inputs: &[Tensor], build: Build, w_seed: u64) -> f64 {
    let objective = |xs: &[Tensor]| -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&tape, &vars);
        let w = tensor(&out.shape(), &mut rng::stream(w_seed, &[]), 1.0);
        let f = out.mul(tape.constant(w)).unwrap().sum();
        let value = f.item();
        let g = tape.backward(f).unwrap();
        (value, vars.iter().map(|v| g.wrt(*v)).collect())
    };
    let (_, grads) = objective(inputs);
    let h = 1e-5;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (a, x) in inputs.iter().enumerate() {
        for c in 0..x.numel() {
            let shifted = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[a].data_mut()[c] += d;
                objective(&xs).0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let g = grads[a].data()[c];
            num = num.max((g - fd).abs());
            den = den.max(fd.abs()).max(g.abs());
        }
    }
    num / den.max(1e-12)
}

fn primitives() -> Vec<Primitive> {
    use rng::StreamRng as R;
    fn two(r: &mut R) -> Vec<Tensor> {
        vec![tensor(&[3, 4], r, 1.0), tensor(&[3, 4], r, 1.0)]
    }
    fn one(r: &mut R) -> Vec<Tensor> {
        vec![tensor(&[3, 4], r, 1.0)]
    }
    fn kinked(r: &mut R) -> Vec<Tensor> {
        vec![away_from_zero(&[3, 4], r)]
    }
    fn pos(r: &mut R) -> Vec<Tensor> {
        vec![positive(&[3, 4], r)]
    }
    vec![
        Primitive { name: "add", inputs: two, build: |_, v| v[0].add(v[1]).unwrap() },
        Primitive { name: "sub", inputs: two, build: |_, v| v[0].sub(v[1]).unwrap() },
        Primitive { name: "mul", inputs: two, build: |_, v| v[0].mul(v[1]).unwrap() },
        Primitive {
            name: "div",
            inputs: |r| vec![tensor(&[3, 4], r, 1.0), positive(&[3, 4], r)],
            build: |_, v| v[0].div(v[1]).unwrap(),
        },
        Primitive { name: "scale", inputs: one, build: |_, v| v[0].scale(-1.7) },
        Primitive { name: "neg", inputs: one, build: |_, v| v[0].neg() },
        Primitive {
            name: "matmul",
            inputs: |r| vec![tensor(&[3, 4], r, 1.0), tensor(&[4, 2], r, 1.0)],
            build: |_, v| v[0].matmul(v[1]).unwrap(),
        },
        Primitive { name: "transpose", inputs: one, build: |_, v| v[0].transpose().unwrap() },
        Primitive { name: "reshape", inputs: one, build: |_, v| v[0].reshape(&[2, 6]).unwrap() },
        Primitive {
            name: "broadcast",
            inputs: |r| vec![tensor(&[1, 4], r, 1.0)],
            build: |_, v| v[0].broadcast(&[3, 4]).unwrap(),
        },
        Primitive {
            name: "add_broadcast",
            inputs: |r| vec![tensor(&[3, 4], r, 1.0), tensor(&[4], r, 1.0)],
            build: |_, v| v[0].add_broadcast(v[1]).unwrap(),
        },
        Primitive {
            name: "mul_broadcast",
            inputs: |r| vec![tensor(&[3, 4], r, 1.0), tensor(&[3, 1], r, 1.0)],
            build: |_, v| v[0].mul_broadcast(v[1]).unwrap(),
        },
        Primitive { name: "slice", inputs: one, build: |_, v| v[0].slice(1, 1, 3).unwrap() },
        Primitive { name: "concat", inputs: two, build: |t, v| t.concat(&[v[0], v[1]], 1).unwrap() },
        Primitive { name: "sum", inputs: one, build: |_, v| v[0].sum() },
        Primitive { name: "mean", inputs: one, build: |_, v| v[0].mean() },
        Primitive { name: "sum_axis", inputs: one, build: |_, v| v[0].sum_axis(0).unwrap() },
        Primitive { name: "mean_axis", inputs: one, build: |_, v| v[0].mean_axis(1).unwrap() },
        Primitive { name: "softmax", inputs: one, build: |_, v| v[0].softmax() },
        Primitive { name: "log_softmax", inputs: one, build: |_, v| v[0].log_softmax() },
        Primitive { name: "relu", inputs: kinked, build: |_, v| v[0].relu() },
        Primitive { name: "silu", inputs: one, build: |_, v| v[0].silu() },
        Primitive { name: "tanh", inputs: one, build: |_, v| v[0].tanh() },
        Primitive { name: "exp", inputs: one, build: |_, v| v[0].exp() },
        Primitive { name: "log", inputs: pos, build: |_, v| v[0].log() },
        Primitive { name: "square", inputs: one, build: |_, v| v[0].square() },
        Primitive { name: "sqrt", inputs: pos, build: |_, v| v[0].sqrt() },
        Primitive { name: "abs", inputs: kinked, build: |_, v| v[0].abs() },
        Primitive {
            name: "mlp3",
            inputs: |r| {
                vec![
                    tensor(&[5, 4], r, 1.0),
                    tensor(&[4, 6], r, 0.5),
                    tensor(&[6], r, 0.5),
                    tensor(&[6, 6], r, 0.5),
                    tensor(&[6], r, 0.5),
                    tensor(&[6, 3], r, 0.5),
                    tensor(&[3], r, 0.5),
                ]
            },
            // Linear → tanh → Linear → SiLU → Linear → log-softmax
            build: |_, v| {
                let h1 = v[0].matmul(v[1]).unwrap().add_broadcast(v[2]).unwrap().tanh();
                let h2 = h1.matmul(v[3]).unwrap().add_broadcast(v[4]).unwrap().silu();
                h2.matmul(v[5]).unwrap().add_broadcast(v[6]).unwrap().log_softmax()
            },
        },
    ]
}

fn gradient_checks() -> Outcome {
    let mut worst = ("", 0.0f64);
    for (k, p) in primitives().iter().enumerate() {
        for probe in 0..50u64 {
            let mut r = rng::stream(2, &[k as u64, probe]);
            let inputs = (p.inputs)(&mut r);
            let err = probe_gradient(&inputs, p.build, 1000 + probe);
            if err > worst.1 {
                worst = (p.name, err);
            }
        }
    }
    let n = primitives().len();
    outcome(worst.1 < 1e-6, format!("{n} primitives × 50 probes, worst relative error {:.2e} ({})", worst.1, worst.0))
}

// ------------------------------------------------------------------ 3

fn se3_contracts() -> Outcome {
    let mut cfg = Config::default();
    cfg.model = ModelConfig::default();
    let net = training::build_network(&cfg).unwrap();
    let corpus = toy::corpus();
    let probes: Vec<MoleculeGraph> = corpus.into_iter().rev().take(10).collect();
    let rep = evalsuite::symmetry_report(&net, &probes, &SymmetryProbe { seed: 3, ..Default::default() }).unwrap();
    let pass = rep.rotation < 1e-4
        && rep.invariance() < 1e-5
        && rep.invariance_embedding < 1e-5
        && rep.permutation < 1e-6
        && rep.reflection < 1e-4
        && rep.min_e2_magnitude > 1e-6;
    outcome(
        pass,
        format!(
            "rotation {:.1e}, H/E invariance {:.1e}, permutation {:.1e}, reflection (e₂ kept, e₁/e₃ flipped) {:.1e}, min |e₂ part| {:.1e}",
            rep.rotation,
            rep.invariance(),
            rep.permutation,
            rep.reflection,
            rep.min_e2_magnitude
        ),
    )
}

// ------------------------------------------------------------------ 4

fn trajectory_checks() -> Outcome {
    let schedules = ComponentSchedules::default();
    let x0 = toy::molecule("ethanol").unwrap().to_dense();
    let mut fd_worst: f64 = 0.0;
    for (k, t) in [0.05, 0.4, 0.9].into_iter().enumerate() {
        let s = trajectory::perturb_continuous(&x0, t, &mut rng::stream(4, &[k as u64]), &schedules).unwrap();
        let comps = [
            (&schedules.p, &s.xt.p, &x0.p, &s.score_target.p),
            (&schedules.h, &s.xt.h, &x0.h, &s.score_target.h),
            (&schedules.e, &s.xt.e, &x0.e, &s.score_target.e),
        ];
        for (sch, xt, mu, target) in comps {
            let (a, b) = sch.alpha_beta(t).unwrap();
            let logp = |x: f64, m: f64| -0.5 * ((x - a * m) / b).powi(2) - (b * (2.0 * std::f64::consts::PI).sqrt()).ln();
            let h = 1e-6 * b;
            for ((&x, &m), &g) in xt.data().iter().zip(mu.data()).zip(target.data()) {
                let fd = (logp(x + h, m) - logp(x - h, m)) / (2.0 * h);
                fd_worst = fd_worst.max((fd - g).abs() / (1.0 + g.abs()));
            }
        }
    }
    let vp = NoiseSchedule::default();
    let identity = (0..1000)
        .map(|k| {
            let (a, b) = vp.alpha_beta(k as f64 / 999.0).unwrap();
            (a * a + b * b - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let n = 100_000;
    let betas = [0.02, 0.05, 0.1, 0.05, 0.08, 0.12, 0.03, 0.07];
    let tokens: Vec<usize> = (0..n).map(|i| i % 5).collect();
    let out = trajectory::perturb_absorbing(&tokens, 5, betas.len(), &betas, &mut rng::stream(4, &[99])).unwrap();
    let frac = out.iter().filter(|&&t| t == 5).count() as f64 / n as f64;
    let p = 1.0 - betas.iter().map(|b| 1.0 - b).product::<f64>();
    let sigmas = (frac - p).abs() / (p * (1.0 - p) / n as f64).sqrt();
    outcome(
        fd_worst < 1e-6 && identity < 1e-12 && sigmas < 3.0,
        format!("score vs FD {fd_worst:.1e}, |α²+β²−1| {identity:.1e}, mask fraction {frac:.4} vs {p:.4} ({sigmas:.2}σ)"),
    )
}

// ------------------------------------------------------------------ 5

fn gaussian_toy() -> Outcome {
    let rep = evalsuite::gaussian_score_toy(&NoiseSchedule::default(), &GaussianToyConfig::default()).unwrap();
    let per_t: Vec<String> = rep.relative_errors.iter().map(|(t, e)| format!("t={t}: {:.1}%", 100.0 * e)).collect();
    outcome(rep.max_relative_error < 0.10, format!("relative error {}", per_t.join(", ")))
}

// ------------------------------------------------------------------ 6

fn marginal_preservation() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, lambda) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let m = sampling::gaussian_reverse_moments(1.0, 0.5, &NoiseSchedule::default(), lambda, 10_000, 1000, 1e-3, 60 + k as u64)
            .unwrap();
        // against the data distribution N(1, 0.25) itself, with the same Monte Carlo errors
        let se_mean = (0.25f64 / 10_000.0).sqrt();
        let se_var = 0.25 * (2.0f64 / 9_999.0).sqrt();
        let data_mean = (m.mean - 1.0).abs() / se_mean;
        let data_var = (m.var - 0.25).abs() / se_var;
        pass &= m.mean_sigmas < 3.0 && m.var_sigmas < 3.0 && data_mean < 3.0 && data_var < 3.0;
        parts.push(format!("λ={lambda}: mean {:.4} ({data_mean:.2}σ) var {:.4} ({data_var:.2}σ)", m.mean, m.var));
    }
    outcome(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 7

fn training_sanity() -> Outcome {
    let mut cfg = Config::default();
    cfg.training = TrainConfig { epochs: 50, lr: 1e-3, threads: 1, seed: 7, ..TrainConfig::default() };
    cfg.loss.lambda1 = 1.0;
    cfg.loss.lambda2 = 0.01;
    let data = toy::corpus();
    let a = training::train(&data, &cfg).unwrap();
    let b = training::train(&data, &cfg).unwrap();
    let first = a.history[0].total;
    let last = a.history.last().unwrap().total;
    let finite = a.history.iter().all(|s| s.total.is_finite()) && a.network.params.is_finite();
    let bits = |h: &[training::EpochStats]| h.iter().map(|s| s.total.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a.history) == bits(&b.history) && a.network.params == b.network.params;
    outcome(
        last < 0.5 * first && finite && identical,
        format!("loss {first:.3} → {last:.3} (ratio {:.3}), finite {finite}, repeat bitwise identical {identical}", last / first),
    )
}

// ------------------------------------------------------------------ 8

fn overfit_one() -> Outcome {
    let template = toy::molecule("ammonia").unwrap();
    let mut cfg = Config::default();
    cfg.model = ModelConfig::small();
    cfg.training = TrainConfig { epochs: 1500, lr: 3e-3, threads: 1, ..TrainConfig::default() };
    let trained = training::train(&vec![template.clone(); 8], &cfg).unwrap();
    let sc = SamplerConfig { steps: 1000, lambda: 1.0, n_atoms: template.n(), num_samples: 50, seed: 1, threads: 1, ..Default::default() };
    let samples = sampling::generate(&trained.network, &sc).unwrap();
    let hits = samples.iter().filter(|g| evalsuite::isomorphic(g, &template)).count();
    outcome(hits * 5 >= samples.len() * 4, format!("{hits}/{} samples reproduce the ammonia bond graph", samples.len()))
}

// ------------------------------------------------------------------ 9

fn ablation_probe() -> Outcome {
    const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];
    let corpus = toy::corpus();
    let (graphs, labels) = toy::probe_set(10, 9);
    let mut mse = [0.0f64; 3]; // λ₂ = 0.01, λ₂ = 1, random init
    for &seed in &SEEDS {
        let base = |lambda2: f64| {
            let mut cfg = Config::default();
            cfg.model = ModelConfig::small();
            cfg.training = TrainConfig { epochs: 40, lr: 1e-3, threads: 1, seed, ..TrainConfig::default() };
            cfg.loss.lambda2 = lambda2;
            cfg
        };
        let random = training::build_network(&base(0.01)).unwrap();
        for (k, l2) in [0.01, 1.0].into_iter().enumerate() {
            let net = training::train(&corpus, &base(l2)).unwrap().network;
            let rep = evalsuite::linear_probe(&net, &random, &graphs, &labels, &[seed]).unwrap();
            mse[k] += rep.pretrained_mse / SEEDS.len() as f64;
            if k == 0 {
                mse[2] += rep.random_mse / SEEDS.len() as f64;
            }
        }
    }
    outcome(
        mse[0] <= mse[1] && mse[0] <= mse[2],
        format!("probe MSE λ₂=0.01 {:.3e}, λ₂=1 {:.3e}, random init {:.3e}", mse[0], mse[1], mse[2]),
    )
}

// ------------------------------------------------------------------ 10

fn metrics_plumbing() -> Outcome {
    let reference = toy::corpus();
    let same = evalsuite::generation_metrics(&reference, &reference).unwrap();
    let mut pass = same.atom_tv == 0.0 && same.bond_tv == 0.0 && same.validity == 1.0 && same.unique == 1.0;

    // 15 distinct corpus molecules, a second water and methanol, three methyl radicals
    let methyl = {
        let mut bonds = vec![0u8; 16];
        for h in 1..4 {
            bonds[h] = 1;
            bonds[h * 4] = 1;
        }
        let pos = vec![[0.0, 0.0, 0.0], [1.09, 0.0, 0.0], [-0.54, 0.94, 0.0], [-0.54, -0.94, 0.0]];
        MoleculeGraph::new(vec![1, 0, 0, 0], vec![0; 4], bonds, pos).unwrap()
    };
    let mut fixture: Vec<MoleculeGraph> = reference[..15].to_vec();
    fixture.push(toy::molecule("water").unwrap());
    fixture.push(toy::molecule("methanol").unwrap());
    fixture.extend(std::iter::repeat_n(methyl, 3));
    let atoms: usize = fixture.iter().map(MoleculeGraph::n).sum();
    let m = evalsuite::generation_metrics(&fixture, &reference).unwrap();
    // hand counts: 98 atoms, 3 unstable carbons, 17 valid, 16 distinct graphs
    pass &= fixture.len() == 20 && atoms == 98;
    pass &= (m.validity - 17.0 / 20.0).abs() < 1e-12;
    pass &= (m.atom_stability - 95.0 / 98.0).abs() < 1e-12;
    pass &= (m.unique - 16.0 / 20.0).abs() < 1e-12;
    pass &= m.atom_tv > 0.0 && m.bond_tv > 0.0;
    outcome(
        pass,
        format!(
            "self TV {}/{}; fixture validity {:.2}, stability {:.4}, unique {:.2}",
            same.atom_tv, same.bond_tv, m.validity, m.atom_stability, m.unique
        ),
    )
}

// ------------------------------------------------------------------ runner

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("decomposition identity", Duration::from_secs(10), decomposition),
        ("gradient correctness", Duration::from_secs(60), gradient_checks),
        ("SE(3) contracts", Duration::from_secs(60), se3_contracts),
        ("forward trajectory", Duration::from_secs(60), trajectory_checks),
        ("analytic score recovery", Duration::from_secs(120), gaussian_toy),
        ("marginal preservation", Duration::from_secs(300), marginal_preservation),
        ("training sanity", Duration::from_secs(600), training_sanity),
        ("overfit-one generation", Duration::from_secs(600), overfit_one),
        ("ablation direction", Duration::from_secs(900), ablation_probe),
        ("generation metrics", Duration::from_secs(10), metrics_plumbing),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= *budget;
        failed += usize::from(!pass);
        println!(
            "[{}] {id:>2} {name}: {} ({:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
