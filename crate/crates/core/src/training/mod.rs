//! Adam, the seeded epoch loop and checkpoint files.
//!
//! Each step evaluates the batch's contrastive embeddings first without
//! gradients, differentiates the contrastive term with respect to those
//! embeddings, then runs one tape per molecule whose objective is its share
//! of the score-matching loss plus the embedding terms contracted with
//! that gradient. Per-sample parameter gradients are summed in batch order,
//! so the result does not depend on the thread count.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::autodiff::{Tape, Tensor, Var};
use crate::config::{Config, ConfigError};
use crate::loss::{self, LossError};
use crate::molgraph::{DenseTensors, MoleculeGraph};
use crate::network::{ModelParams, NetworkError, ScoreNetwork};
use crate::rng;
use crate::schedule::ComponentSchedules;
use crate::trajectory::{self, TrajectoryError, TrajectoryMode, TrajectorySample};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient for parameter {0:?}; step rejected")]
    NonFiniteGradient(String),
    #[error("gradient for {0:?} has no matching parameter")]
    GradientMismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss:e} exceeds {limit:e}")]
    Diverged { epoch: usize, step: usize, loss: f64, limit: f64 },
    #[error("training runs on the continuous trajectory; {0} is not supported here")]
    UnsupportedMode(TrajectoryMode),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("epoch hook failed: {0}")]
    Hook(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Save every this many epochs when a checkpoint path is given; 0 = only at the end.
    pub checkpoint_interval: usize,
    /// Data-parallel width; 0 = all cores.
    pub threads: usize,
    /// Probability of conditioning a sample on its own noisy state instead of x₀.
    pub cond_dropout: f64,
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            clip_norm: 10.0,
            checkpoint_interval: 0,
            threads: 0,
            cond_dropout: 0.5,
            divergence_limit: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("training.lr = {} must be positive", self.lr));
        }
        if self.batch_size < 2 {
            return Err(format!("training.batch_size = {} must be at least 2", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err("Adam needs 0 <= beta1, beta2 < 1 and eps > 0".into());
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err("training.cond_dropout must lie in [0, 1]".into());
        }
        if self.clip_norm < 0.0 || !(self.divergence_limit > 0.0) {
            return Err("training.clip_norm must be >= 0 and divergence_limit > 0".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or does not line up with the parameters.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, hp: &AdamConfig) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.get(name).ok_or_else(|| TrainError::GradientMismatch(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(TrainError::GradientMismatch(name.clone()));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    if grads.len() != params.len() {
        let missing = params.names().into_iter().find(|n| grads.get(n).is_none()).unwrap_or_default();
        return Err(TrainError::GradientMismatch(missing));
    }
    state.step += 1;
    let c1 = 1.0 - hp.beta1.powi(state.step as i32);
    let c2 = 1.0 - hp.beta2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).ok_or_else(|| TrainError::GradientMismatch(name.clone()))?.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
        }
        let v = state.v.get_mut(name).ok_or_else(|| TrainError::GradientMismatch(name.clone()))?.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
        }
        let (m, v) = (state.m.get(name).expect("present").data(), state.v.get(name).expect("present").data());
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pi -= hp.lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads.iter().map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales to norm `max` when larger; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max: f64) -> f64 {
    let norm = global_norm(grads);
    if max > 0.0 && norm > max {
        let s = max / norm;
        for (_, t) in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Per-epoch means over optimisation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub l_sc: f64,
    pub l_co: f64,
    /// `l_sc` split into P, H, E.
    pub components: [f64; 3],
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ScoreNetwork,
    pub adam: AdamState,
    pub history: Vec<EpochStats>,
}

/// A freshly initialised network for a run configuration.
pub fn build_network(cfg: &Config) -> Result<ScoreNetwork> {
    let schedules = ComponentSchedules::uniform(cfg.schedule.schedule()?);
    let mut net = ScoreNetwork::new(cfg.model, schedules, cfg.training.seed)?;
    net.frame_cutoff = cfg.frames.cutoff;
    Ok(net)
}

/// Trains a new network from `cfg` on `dataset`.
pub fn train(dataset: &[MoleculeGraph], cfg: &Config) -> Result<TrainOutcome> {
    let net = build_network(cfg)?;
    train_from(net, None, dataset, cfg, |_, _, _| Ok(()))
}

struct Prepared {
    sample: TrajectorySample,
    cond: DenseTensors,
}

struct SampleGrad {
    grads: ModelParams,
    l_sc: f64,
    components: [f64; 3],
}

/// Contiguous batches; a trailing batch with a single molecule joins the previous one.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn inner<'t>(a: Var<'t>, g: &Tensor) -> Result<Var<'t>> {
    let c = a.tape().constant(g.clone().reshaped(a.shape()).map_err(NetworkError::from)?);
    Ok(a.mul(c).map_err(NetworkError::from)?.sum())
}

fn sample_gradient(
    net: &ScoreNetwork,
    prep: &Prepared,
    g_anchor: &Tensor,
    g_positive: &Tensor,
    cfg: &Config,
    batch: usize,
) -> Result<SampleGrad> {
    let tape = Tape::new();
    let pv = net.params.bind(&tape, true);
    let s = &prep.sample;
    let betas = net.noise_scales(s.t)?;
    let out = net.predict_noise(&pv, &prep.cond, &s.xt, s.t)?;
    let pred = [out.p.scale(-1.0 / betas[0]), out.h.scale(-1.0 / betas[1]), out.e.scale(-1.0 / betas[2])];
    let weights = betas.map(|b| cfg.loss.weighting.weight(b));
    let (sc, comps) = loss::score_matching_loss(pred, &s.score_target, weights)?;
    let mut objective = sc.scale(cfg.loss.lambda1 / batch as f64);
    if cfg.loss.lambda2 > 0.0 && batch >= 2 {
        let anchor = net.embed(&pv, &s.x0, 0.0)?;
        let positive = net.embed(&pv, &s.xt, s.t)?;
        let co = inner(anchor, g_anchor)?.add(inner(positive, g_positive)?).map_err(NetworkError::from)?;
        objective = objective.add(co.scale(cfg.loss.lambda2)).map_err(NetworkError::from)?;
    }
    let grads = tape.backward(objective).map_err(NetworkError::from)?;
    let map = pv.iter().map(|(k, v)| (k.clone(), grads.wrt(*v))).collect();
    Ok(SampleGrad { grads: ModelParams::from_map(map), l_sc: sc.item(), components: comps.map(|c| c.item()) })
}

/// Contrastive value and its gradient with respect to each anchor and positive embedding.
fn contrastive_gradients(anchors: &[Tensor], positives: &[Tensor], taus: &[f64]) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    if anchors.len() < 2 {
        let z = |v: &[Tensor]| v.iter().map(|t| Tensor::zeros(t.shape())).collect();
        return Ok((0.0, z(anchors), z(positives)));
    }
    let tape = Tape::new();
    let a: Vec<Var> = anchors.iter().map(|t| tape.leaf(t.clone())).collect();
    let p: Vec<Var> = positives.iter().map(|t| tape.leaf(t.clone())).collect();
    let l = loss::contrastive_loss(&a, &p, taus)?;
    let value = l.item();
    let g = tape.backward(l).map_err(NetworkError::from)?;
    Ok((value, a.iter().map(|v| g.wrt(*v)).collect(), p.iter().map(|v| g.wrt(*v)).collect()))
}

fn add_into(acc: &mut ModelParams, g: &ModelParams) {
    for (name, t) in acc.iter_mut() {
        if let Some(src) = g.get(name) {
            for (a, b) in t.data_mut().iter_mut().zip(src.data()) {
                *a += b;
            }
        }
    }
}

/// Continues training `net`. `on_epoch` runs after every epoch with the
/// current parameters and optimiser state.
pub fn train_from(
    mut net: ScoreNetwork,
    adam: Option<AdamState>,
    dataset: &[MoleculeGraph],
    cfg: &Config,
    mut on_epoch: impl FnMut(&EpochStats, &ScoreNetwork, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.trajectory.mode != TrajectoryMode::Continuous {
        return Err(TrainError::UnsupportedMode(cfg.trajectory.mode));
    }
    let tc = &cfg.training;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(tc.threads)
        .build()
        .map_err(|e| TrainError::ThreadPool(e.to_string()))?;
    let dense: Vec<DenseTensors> = dataset.iter().map(MoleculeGraph::to_dense).collect();
    let mut adam = adam.unwrap_or_else(|| AdamState::new(&net.params));
    let hp = tc.adam();
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..dense.len()).collect();
        order.shuffle(&mut rng::stream(tc.seed, &[0, epoch as u64]));
        let mut sums = EpochStats { epoch, total: 0.0, l_sc: 0.0, l_co: 0.0, components: [0.0; 3], grad_norm: 0.0 };
        let steps = batches(&order, tc.batch_size);
        for (step, batch) in steps.iter().enumerate() {
            let prepared = batch
                .iter()
                .enumerate()
                .map(|(k, &idx)| {
                    let mut r = rng::stream(tc.seed, &[1, epoch as u64, step as u64, k as u64]);
                    let t = trajectory::sample_time(&mut r, cfg.trajectory.t_min);
                    let sample = trajectory::perturb_continuous(&dense[idx], t, &mut r, &net.schedules)?;
                    let drop = r.random::<f64>() < tc.cond_dropout;
                    let cond = if drop { sample.xt.clone() } else { sample.x0.clone() };
                    Ok(Prepared { sample, cond })
                })
                .collect::<Result<Vec<_>>>()?;
            let b = prepared.len();
            let net_ref = &net;
            let (l_co, g_a, g_p) = if cfg.loss.lambda2 > 0.0 && b >= 2 {
                let embs = pool.install(|| {
                    prepared
                        .par_iter()
                        .map(|p| {
                            Ok((net_ref.embedding(&p.sample.x0, 0.0)?, net_ref.embedding(&p.sample.xt, p.sample.t)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                let taus = prepared
                    .iter()
                    .map(|p| Ok(loss::temperature(cfg.loss.tau0, net_ref.noise_scales(p.sample.t)?[0])))
                    .collect::<Result<Vec<_>>>()?;
                let (a, p): (Vec<_>, Vec<_>) = embs.into_iter().unzip();
                contrastive_gradients(&a, &p, &taus)?
            } else {
                let z = vec![Tensor::zeros(&[net.config.proj_dim]); b];
                (0.0, z.clone(), z)
            };
            let per_sample = pool.install(|| {
                prepared
                    .par_iter()
                    .enumerate()
                    .map(|(k, p)| sample_gradient(net_ref, p, &g_a[k], &g_p[k], cfg, b))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut grads = net.params.zeros_like();
            let mut l_sc = 0.0;
            let mut comps = [0.0; 3];
            for s in &per_sample {
                add_into(&mut grads, &s.grads);
                l_sc += s.l_sc / b as f64;
                for c in 0..3 {
                    comps[c] += s.components[c] / b as f64;
                }
            }
            let report = loss::total_loss_with_components(l_sc, l_co, cfg.loss.lambda1, cfg.loss.lambda2, comps)?;
            if !(report.total <= tc.divergence_limit) {
                return Err(TrainError::Diverged { epoch, step, loss: report.total, limit: tc.divergence_limit });
            }
            let norm = clip_global_norm(&mut grads, tc.clip_norm);
            adam_step(&mut net.params, &grads, &mut adam, &hp)?;
            sums.total += report.total;
            sums.l_sc += report.l_sc;
            sums.l_co += report.l_co;
            sums.grad_norm += norm;
            for c in 0..3 {
                sums.components[c] += comps[c];
            }
        }
        let n = steps.len() as f64;
        let stats = EpochStats {
            epoch,
            total: sums.total / n,
            l_sc: sums.l_sc / n,
            l_co: sums.l_co / n,
            components: sums.components.map(|c| c / n),
            grad_norm: sums.grad_norm / n,
        };
        on_epoch(&stats, &net, &adam)?;
        history.push(stats);
    }
    Ok(TrainOutcome { network: net, adam, history })
}
