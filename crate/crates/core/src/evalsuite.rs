//! Verification harness and downstream metrics: symmetry residuals of the
//! score heads, the 1D Gaussian score-recovery toy, generation metrics and
//! the frozen-embedding linear probe.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor};
use crate::frames::{random_rotation, transform_rows};
use crate::molgraph::{DenseTensors, MoleculeGraph, BOND_TYPES, ELEMENTS};
use crate::network::{fourier_embed, head_3d_coefficients, ModelParams, NetworkError, ScoreNetwork};
use crate::rng;
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::training::{adam_step, AdamConfig, AdamState, TrainError};
use crate::trajectory::{perturb_continuous, TrajectoryError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("labels are constant; the probe has nothing to fit")]
    DegenerateLabels,
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

// ---------------------------------------------------------------- symmetry

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MoleculeSymmetry {
    pub n_atoms: usize,
    pub rotation: f64,
    pub invariance_h: f64,
    pub invariance_e: f64,
    pub invariance_embedding: f64,
    pub permutation: f64,
    /// `max |out(MP) − M(out(P) − 2·e₂ part)|` over improper `M`.
    pub reflection: f64,
    /// Size of the centred e₂ part; non-zero means the reflection check is not vacuous.
    pub e2_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// 3D head: `max |s(RP) − R s(P)|`.
    pub rotation: f64,
    pub invariance_h: f64,
    pub invariance_e: f64,
    pub invariance_embedding: f64,
    pub permutation: f64,
    pub reflection: f64,
    pub min_e2_magnitude: f64,
    pub per_molecule: Vec<MoleculeSymmetry>,
}

impl SymmetryReport {
    /// 2D and H heads together.
    pub fn invariance(&self) -> f64 {
        self.invariance_h.max(self.invariance_e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryProbe {
    pub rotations: usize,
    pub permutations: usize,
    pub reflections: usize,
    pub t: f64,
    pub seed: u64,
}

impl Default for SymmetryProbe {
    fn default() -> Self {
        Self { rotations: 20, permutations: 20, reflections: 5, t: 0.3, seed: 0 }
    }
}

fn rotate_state(x: &DenseTensors, m: &Matrix3<f64>) -> DenseTensors {
    DenseTensors { p: transform_rows(&x.p, m), ..x.clone() }
}

struct HeadOutputs {
    p: Tensor,
    h: Tensor,
    e: Tensor,
    emb: Tensor,
    coeffs: Tensor,
}

fn heads(net: &ScoreNetwork, x0: &DenseTensors, xt: &DenseTensors, t: f64) -> Result<HeadOutputs> {
    let tape = Tape::new();
    let pv = net.params.bind(&tape, false);
    let out = net.predict_noise(&pv, x0, xt, t)?;
    let coeffs = head_3d_coefficients(&pv, &out.latent)?.value();
    let emb = net.embed(&pv, xt, t)?.value();
    Ok(HeadOutputs { p: out.p.value(), h: out.h.value(), e: out.e.value(), emb, coeffs })
}

/// Centred e₂ contribution `c₂·e₂` of the 3D head.
fn e2_part(net: &ScoreNetwork, coeffs: &Tensor, xt: &DenseTensors) -> Tensor {
    let frames = net.frames_for(xt);
    let n = frames.len();
    let mut part = Tensor::zeros(&[n, 3]);
    for (i, f) in frames.iter().enumerate() {
        for k in 0..3 {
            part.set(&[i, k], coeffs.at(&[i, 1]) * f.e2[k]);
        }
    }
    crate::trajectory::remove_mean_rows(&mut part);
    part
}

/// Rotation, reflection and permutation residuals of every head on a noisy
/// copy of each probe molecule.
pub fn symmetry_report(net: &ScoreNetwork, probes: &[MoleculeGraph], probe: &SymmetryProbe) -> Result<SymmetryReport> {
    let mut report = SymmetryReport { min_e2_magnitude: f64::INFINITY, ..Default::default() };
    for (mi, g) in probes.iter().enumerate() {
        let mut r = rng::stream(probe.seed, &[mi as u64]);
        let x0 = g.to_dense();
        let xt = perturb_continuous(&x0, probe.t, &mut r, &net.schedules)?.xt;
        let base = heads(net, &x0, &xt, probe.t)?;
        let mut m = MoleculeSymmetry { n_atoms: g.n(), ..Default::default() };
        for _ in 0..probe.rotations {
            let rot = random_rotation(&mut r);
            let o = heads(net, &rotate_state(&x0, &rot), &rotate_state(&xt, &rot), probe.t)?;
            m.rotation = m.rotation.max(o.p.max_abs_diff(&transform_rows(&base.p, &rot)));
            m.invariance_h = m.invariance_h.max(o.h.max_abs_diff(&base.h));
            m.invariance_e = m.invariance_e.max(o.e.max_abs_diff(&base.e));
            m.invariance_embedding = m.invariance_embedding.max(o.emb.max_abs_diff(&base.emb));
        }
        let mut order: Vec<usize> = (0..g.n()).collect();
        for _ in 0..probe.permutations {
            order.shuffle(&mut r);
            let o = heads(net, &x0.permuted(&order), &xt.permuted(&order), probe.t)?;
            let res = [
                o.p.max_abs_diff(&base.p.permute_rows(&order)),
                o.h.max_abs_diff(&base.h.permute_rows(&order)),
                o.e.max_abs_diff(&base.e.permute_pairs(&order)),
                o.emb.max_abs_diff(&base.emb),
            ];
            m.permutation = res.into_iter().fold(m.permutation, f64::max);
        }
        let e2 = e2_part(net, &base.coeffs, &xt);
        m.e2_magnitude = e2.max_abs();
        let anti: Tensor = {
            let d = base.p.data().iter().zip(e2.data()).map(|(a, b)| a - 2.0 * b).collect();
            Tensor::new(base.p.shape().to_vec(), d).expect("n×3")
        };
        for k in 0..probe.reflections {
            let refl = if k == 0 { -Matrix3::identity() } else { -random_rotation(&mut r) };
            let o = heads(net, &rotate_state(&x0, &refl), &rotate_state(&xt, &refl), probe.t)?;
            m.reflection = m.reflection.max(o.p.max_abs_diff(&transform_rows(&anti, &refl)));
        }
        report.rotation = report.rotation.max(m.rotation);
        report.invariance_h = report.invariance_h.max(m.invariance_h);
        report.invariance_e = report.invariance_e.max(m.invariance_e);
        report.invariance_embedding = report.invariance_embedding.max(m.invariance_embedding);
        report.permutation = report.permutation.max(m.permutation);
        report.reflection = report.reflection.max(m.reflection);
        report.min_e2_magnitude = report.min_e2_magnitude.min(m.e2_magnitude);
        report.per_molecule.push(m);
    }
    if probes.is_empty() {
        report.min_e2_magnitude = 0.0;
    }
    Ok(report)
}

// ------------------------------------------------------- Gaussian score toy

/// Marginal score of `x₀ ~ N(μ, σ²)` at time `t`: `−(x − αμ)/(α²σ² + β²)`.
pub fn analytic_gaussian_score(x: f64, t: f64, mu: f64, sigma: f64, schedule: &NoiseSchedule) -> Result<f64> {
    let (a, b) = schedule.alpha_beta(t)?;
    Ok(-(x - a * mu) / (a * a * sigma * sigma + b * b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianToyConfig {
    pub mu: f64,
    pub sigma: f64,
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
    pub lr: f64,
    pub t_min: f64,
    pub seed: u64,
}

impl Default for GaussianToyConfig {
    fn default() -> Self {
        Self { mu: 1.0, sigma: 0.5, steps: 6000, batch: 256, hidden: 32, lr: 3e-3, t_min: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianToyReport {
    /// Per evaluation time: `max_grid |ŝ − s| / max_grid |s|`.
    pub relative_errors: Vec<(f64, f64)>,
    pub max_relative_error: f64,
    pub final_loss: f64,
}

pub const TOY_EVAL_TIMES: [f64; 3] = [0.1, 0.5, 0.9];
const TOY_TIME_DIM: usize = 8;

/// Small MLP `ε̂(c_in(t)·x, t)` with score `−ε̂/β(t)`; `c_in` normalises by the
/// marginal scale estimated from the data.
struct ToyNet {
    params: ModelParams,
    data_mean: f64,
    data_std: f64,
}

impl ToyNet {
    fn init(hidden: usize, seed: u64) -> Self {
        let shapes = [
            ("l0.w", vec![2 + TOY_TIME_DIM, hidden]),
            ("l0.b", vec![hidden]),
            ("l1.w", vec![hidden, hidden]),
            ("l1.b", vec![hidden]),
            ("l2.w", vec![hidden, 1]),
            ("l2.b", vec![1]),
        ];
        let mut r = rng::stream(seed, &[0x70]);
        let map = shapes
            .into_iter()
            .map(|(n, s)| {
                let t = if s.len() == 1 {
                    Tensor::zeros(&s)
                } else {
                    let std = (2.0 / (s[0] + s[1]) as f64).sqrt();
                    Tensor::new(s.clone(), rng::normals(&mut r, s[0] * s[1]).into_iter().map(|z| z * std).collect())
                        .expect("shape")
                };
                (n.to_string(), t)
            })
            .collect::<BTreeMap<_, _>>();
        Self { params: ModelParams::from_map(map), data_mean: 0.0, data_std: 1.0 }
    }

    fn inputs(&self, xs: &[f64], ts: &[f64], s: &NoiseSchedule) -> Result<Tensor> {
        let w = 2 + TOY_TIME_DIM;
        let mut data = Vec::with_capacity(xs.len() * w);
        for (&x, &t) in xs.iter().zip(ts) {
            let (a, b) = s.alpha_beta(t)?;
            let scale = (a * a * self.data_std * self.data_std + b * b).sqrt();
            data.push((x - a * self.data_mean) / scale);
            data.push(a * self.data_mean / scale);
            data.extend_from_slice(fourier_embed(t, TOY_TIME_DIM).data());
        }
        Ok(Tensor::new(vec![xs.len(), w], data).expect("rows"))
    }

    fn forward<'t>(&self, pv: &crate::network::ParamVars<'t>, input: Tensor) -> Result<crate::autodiff::Var<'t>> {
        let tape = pv.tape();
        let b = input.shape()[0];
        let mut h = tape.constant(input);
        for (k, act) in [(0, true), (1, true), (2, false)] {
            let w = pv.get(&format!("l{k}.w"))?;
            let bias = pv.get(&format!("l{k}.b"))?;
            let width = bias.shape()[0];
            let bb = bias.reshape(&[1, width]).map_err(NetworkError::from)?.broadcast(&[b, width]).map_err(NetworkError::from)?;
            h = h.matmul(w).map_err(NetworkError::from)?.add(bb).map_err(NetworkError::from)?;
            if act {
                h = h.silu();
            }
        }
        Ok(h)
    }

    fn score(&self, xs: &[f64], t: f64, s: &NoiseSchedule) -> Result<Vec<f64>> {
        let (_, b) = s.alpha_beta(t)?;
        let tape = Tape::new();
        let pv = self.params.bind(&tape, false);
        let ts = vec![t; xs.len()];
        let eps = self.forward(&pv, self.inputs(xs, &ts, s)?)?.value();
        Ok(eps.data().iter().map(|e| -e / b).collect())
    }
}

/// Trains the toy score net on `N(μ, σ²)` with the β²-weighted denoising
/// objective and compares it with the analytic marginal score on
/// `x ∈ μ ± 2√(α²σ² + β²)` at `t ∈ {0.1, 0.5, 0.9}`.
pub fn gaussian_score_toy(schedule: &NoiseSchedule, cfg: &GaussianToyConfig) -> Result<GaussianToyReport> {
    let mut net = ToyNet::init(cfg.hidden, cfg.seed);
    let mut r = rng::stream(cfg.seed, &[0x71]);
    let pool: Vec<f64> = (0..4096).map(|_| cfg.mu + cfg.sigma * rng::normal(&mut r)).collect();
    net.data_mean = pool.iter().sum::<f64>() / pool.len() as f64;
    net.data_std = (pool.iter().map(|x| (x - net.data_mean).powi(2)).sum::<f64>() / pool.len() as f64).sqrt();
    let mut adam = AdamState::new(&net.params);
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, &[0x72, step as u64]);
        let mut xs = Vec::with_capacity(cfg.batch);
        let mut ts = Vec::with_capacity(cfg.batch);
        let mut zs = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let x0 = cfg.mu + cfg.sigma * rng::normal(&mut r);
            let t = crate::trajectory::sample_time(&mut r, cfg.t_min);
            let z = rng::normal(&mut r);
            let (a, b) = schedule.alpha_beta(t)?;
            xs.push(a * x0 + b * z);
            ts.push(t);
            zs.push(z);
        }
        let tape = Tape::new();
        let pv = net.params.bind(&tape, true);
        let eps = net.forward(&pv, net.inputs(&xs, &ts, schedule)?)?;
        // β²·(ŝ − (−z/β))² = (ε̂ − z)²
        let target = tape.constant(Tensor::new(vec![cfg.batch, 1], zs).expect("column"));
        let loss = eps.sub(target).map_err(NetworkError::from)?.square().mean();
        final_loss = loss.item();
        let g = tape.backward(loss).map_err(NetworkError::from)?;
        let grads = ModelParams::from_map(pv.iter().map(|(k, v)| (k.clone(), g.wrt(*v))).collect());
        // cosine decay
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        adam_step(&mut net.params, &grads, &mut adam, &AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 })?;
    }
    let mut relative_errors = Vec::new();
    for t in TOY_EVAL_TIMES {
        let (a, b) = schedule.alpha_beta(t)?;
        let sd = (a * a * cfg.sigma * cfg.sigma + b * b).sqrt();
        let xs: Vec<f64> = (0..=20).map(|k| cfg.mu - 2.0 * sd + 4.0 * sd * k as f64 / 20.0).collect();
        let pred = net.score(&xs, t, schedule)?;
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (&x, &p) in xs.iter().zip(&pred) {
            let s = analytic_gaussian_score(x, t, cfg.mu, cfg.sigma, schedule)?;
            err = err.max((p - s).abs());
            scale = scale.max(s.abs());
        }
        relative_errors.push((t, err / scale));
    }
    let max_relative_error = relative_errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GaussianToyReport { relative_errors, max_relative_error, final_loss })
}

// ------------------------------------------------------ generation metrics

/// Weisfeiler–Lehman style label hash over (element, charge) with bond-typed
/// neighbourhoods. Isomorphic graphs always collide; the converse is not
/// guaranteed.
pub fn canonical_hash(g: &MoleculeGraph) -> String {
    let n = g.n();
    let mut labels: Vec<String> =
        (0..n).map(|i| format!("{}{:+}", g.element(i), g.charges()[i])).collect();
    for _ in 0..n.min(6).max(1) {
        labels = (0..n)
            .map(|i| {
                let mut nb: Vec<String> =
                    (0..n).filter(|&j| g.bond(i, j) > 0).map(|j| format!("{}:{}", g.bond(i, j), labels[j])).collect();
                nb.sort();
                let mut h = Sha256::new();
                h.update(labels[i].as_bytes());
                for s in &nb {
                    h.update(b"|");
                    h.update(s.as_bytes());
                }
                hex::encode(&h.finalize()[..12])
            })
            .collect();
    }
    labels.sort();
    let mut h = Sha256::new();
    h.update(n.to_le_bytes());
    for l in &labels {
        h.update(l.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Exact graph isomorphism on (element, charge, bond category) by backtracking.
pub fn isomorphic(a: &MoleculeGraph, b: &MoleculeGraph) -> bool {
    let n = a.n();
    if n != b.n() {
        return false;
    }
    let key = |g: &MoleculeGraph, i: usize| {
        let mut bonds: Vec<u8> = (0..g.n()).map(|j| g.bond(i, j)).filter(|&x| x > 0).collect();
        bonds.sort();
        (g.atom_types()[i], g.charges()[i], bonds)
    };
    let ka: Vec<_> = (0..n).map(|i| key(a, i)).collect();
    let kb: Vec<_> = (0..n).map(|i| key(b, i)).collect();
    let mut sa = ka.clone();
    let mut sb = kb.clone();
    sa.sort();
    sb.sort();
    if sa != sb {
        return false;
    }
    fn extend(
        i: usize,
        a: &MoleculeGraph,
        b: &MoleculeGraph,
        ka: &[(u8, i8, Vec<u8>)],
        kb: &[(u8, i8, Vec<u8>)],
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
    ) -> bool {
        if i == a.n() {
            return true;
        }
        for j in 0..b.n() {
            if used[j] || ka[i] != kb[j] {
                continue;
            }
            if (0..i).any(|k| a.bond(i, k) != b.bond(j, map[k])) {
                continue;
            }
            map.push(j);
            used[j] = true;
            if extend(i + 1, a, b, ka, kb, map, used) {
                return true;
            }
            map.pop();
            used[j] = false;
        }
        false
    }
    extend(0, a, b, &ka, &kb, &mut Vec::with_capacity(n), &mut vec![false; n])
}

/// `½ Σ |p − q|` between two count vectors after normalisation.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let norm = |v: f64, s: f64| if s > 0.0 { v / s } else { 0.0 };
    0.5 * a.iter().zip(b).map(|(x, y)| (norm(*x, sa) - norm(*y, sb)).abs()).sum::<f64>()
}

fn atom_counts(gs: &[MoleculeGraph]) -> Vec<f64> {
    let mut c = vec![0.0; ELEMENTS.len()];
    for g in gs {
        for &t in g.atom_types() {
            c[t as usize] += 1.0;
        }
    }
    c
}

/// Counts of bond categories 1.. over unordered pairs.
fn bond_counts(gs: &[MoleculeGraph]) -> Vec<f64> {
    let mut c = vec![0.0; BOND_TYPES - 1];
    for g in gs {
        for (_, _, b) in g.bond_list() {
            c[b as usize - 1] += 1.0;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub count: usize,
    /// Fraction of molecules whose every atom passes the valence table.
    pub validity: f64,
    /// Fraction of atoms passing the valence table.
    pub atom_stability: f64,
    /// Distinct canonical hashes over the number of samples.
    pub unique: f64,
    pub atom_tv: f64,
    pub bond_tv: f64,
}

pub fn generation_metrics(samples: &[MoleculeGraph], reference: &[MoleculeGraph]) -> Result<GenerationMetrics> {
    if samples.is_empty() || reference.is_empty() {
        return Err(EvalError::Input("generation metrics need non-empty sample and reference sets".into()));
    }
    let n = samples.len() as f64;
    let reports: Vec<_> = samples.iter().map(MoleculeGraph::validate_valence).collect();
    let atoms: usize = samples.iter().map(MoleculeGraph::n).sum();
    let stable_atoms: usize = reports.iter().map(|r| r.atoms.iter().filter(|a| a.stable).count()).sum();
    let hashes: BTreeSet<String> = samples.iter().map(canonical_hash).collect();
    Ok(GenerationMetrics {
        count: samples.len(),
        validity: reports.iter().filter(|r| r.stable).count() as f64 / n,
        atom_stability: stable_atoms as f64 / atoms.max(1) as f64,
        unique: hashes.len() as f64 / n,
        atom_tv: total_variation(&atom_counts(samples), &atom_counts(reference)),
        bond_tv: total_variation(&bond_counts(samples), &bond_counts(reference)),
    })
}

// ------------------------------------------------------------ linear probe

pub const RIDGE: f64 = 1e-3;

/// Test-set MSE of closed-form ridge regression (standardised features,
/// unpenalised intercept) on one 80/20 split per seed, averaged over seeds.
pub fn ridge_probe(features: &[Vec<f64>], labels: &[f64], seeds: &[u64]) -> Result<(f64, Vec<f64>)> {
    let m = features.len();
    if m < 5 || labels.len() != m {
        return Err(EvalError::Input(format!("probe needs >= 5 labelled rows, got {m} features / {} labels", labels.len())));
    }
    let d = features[0].len();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng::stream(seed, &[0x9e]));
        let cut = (m * 4) / 5;
        let (train, test) = idx.split_at(cut);
        let mean: Vec<f64> = (0..d).map(|k| train.iter().map(|&i| features[i][k]).sum::<f64>() / train.len() as f64).collect();
        let std: Vec<f64> = (0..d)
            .map(|k| {
                let v = train.iter().map(|&i| (features[i][k] - mean[k]).powi(2)).sum::<f64>() / train.len() as f64;
                if v > 1e-24 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let row = |i: usize| (0..d).map(|k| (features[i][k] - mean[k]) / std[k]).collect::<Vec<f64>>();
        let y_mean = train.iter().map(|&i| labels[i]).sum::<f64>() / train.len() as f64;
        let x = DMatrix::from_row_iterator(train.len(), d, train.iter().flat_map(|&i| row(i)));
        let y = DVector::from_iterator(train.len(), train.iter().map(|&i| labels[i] - y_mean));
        let mut gram = x.transpose() * &x;
        for k in 0..d {
            gram[(k, k)] += RIDGE;
        }
        let rhs = x.transpose() * y;
        let w = gram
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| EvalError::Input("ridge system is not positive definite".into()))?;
        let mse = test
            .iter()
            .map(|&i| {
                let pred = y_mean + row(i).iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
                (pred - labels[i]).powi(2)
            })
            .sum::<f64>()
            / test.len() as f64;
        per_seed.push(mse);
    }
    Ok((per_seed.iter().sum::<f64>() / seeds.len().max(1) as f64, per_seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub pretrained_mse: f64,
    pub random_mse: f64,
    pub pretrained_per_seed: Vec<f64>,
    pub random_per_seed: Vec<f64>,
    pub label_variance: f64,
}

/// Frozen pooled representations of clean molecules.
pub fn representations(net: &ScoreNetwork, graphs: &[MoleculeGraph]) -> Result<Vec<Vec<f64>>> {
    graphs.iter().map(|g| Ok(net.representation(&g.to_dense())?.into_data())).collect()
}

/// Ridge probe on frozen embeddings of a pretrained and a random-init encoder.
pub fn linear_probe(
    pretrained: &ScoreNetwork,
    random_init: &ScoreNetwork,
    graphs: &[MoleculeGraph],
    labels: &[f64],
    seeds: &[u64],
) -> Result<ProbeReport> {
    let mean = labels.iter().sum::<f64>() / labels.len().max(1) as f64;
    let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / labels.len().max(1) as f64;
    if var < 1e-20 {
        return Err(EvalError::DegenerateLabels);
    }
    let (pm, pp) = ridge_probe(&representations(pretrained, graphs)?, labels, seeds)?;
    let (rm, rp) = ridge_probe(&representations(random_init, graphs)?, labels, seeds)?;
    Ok(ProbeReport { pretrained_mse: pm, random_mse: rm, pretrained_per_seed: pp, random_per_seed: rp, label_variance: var })
}

impl ProbeReport {
    pub fn to_table(&self) -> String {
        format!(
            "encoder      probe MSE\npretrained   {:.6}\nrandom-init  {:.6}\nlabel var    {:.6}\n",
            self.pretrained_mse, self.random_mse, self.label_variance
        )
    }
}

impl GenerationMetrics {
    pub fn to_table(&self) -> String {
        format!(
            "samples   {}\nvalidity  {:.4}\natom stab {:.4}\nunique    {:.4}\nAtomTV    {:.4}\nBondTV    {:.4}\n",
            self.count, self.validity, self.atom_stability, self.unique, self.atom_tv, self.bond_tv
        )
    }
}
