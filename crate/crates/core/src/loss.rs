//! Objectives: weighted denoising score matching, the trajectory contrastive
//! surrogate with in-batch negatives, their weighted sum, the optional
//! restoration and soft score-matching losses, and a finite-state check of
//! the joint-likelihood gradient decomposition.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::molgraph::DenseTensors;
use crate::trajectory::TrajectoryMode;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("shape mismatch in {what}: {left:?} vs {right:?}")]
    Shape { what: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("contrastive loss needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("loss weight {name} = {value} must be finite and non-negative")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("non-finite loss component {0}")]
    NonFinite(&'static str),
    #[error("soft score matching needs the closed-form Gaussian trajectory, not {0}")]
    NonGaussianTrajectory(TrajectoryMode),
    #[error("probability table is not normalisable")]
    NotNormalisable,
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `w(t) = β(t)²`.
    #[default]
    Beta2,
    Uniform,
}

impl Weighting {
    pub fn weight(self, beta: f64) -> f64 {
        match self {
            Self::Beta2 => beta * beta,
            Self::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau0: f64,
    pub weighting: Weighting,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 0.01, tau0: 0.5, weighting: Weighting::Beta2 }
    }
}

fn check_weight(name: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(LossError::NegativeWeight { name, value });
    }
    Ok(())
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_weight("lambda1", self.lambda1)?;
        check_weight("lambda2", self.lambda2)?;
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(LossError::NegativeWeight { name: "tau0", value: self.tau0 });
        }
        Ok(())
    }
}

/// Annealed temperature `τ(t) = τ₀·(0.5 + β(t))`.
pub fn temperature(tau0: f64, beta: f64) -> f64 {
    tau0 * (0.5 + beta)
}

fn same_shape(what: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(LossError::Shape { what, left: a.to_vec(), right: b.to_vec() });
    }
    Ok(())
}

/// `Σ_c w_c · mean((pred_c − target_c)²)` over P, H, E on a tape.
/// Returns the total and the per-component terms.
pub fn score_matching_loss<'t>(
    pred: [Var<'t>; 3],
    target: &DenseTensors,
    weights: [f64; 3],
) -> Result<(Var<'t>, [Var<'t>; 3])> {
    let tape = pred[0].tape();
    let targets = [&target.p, &target.h, &target.e];
    let mut parts = Vec::with_capacity(3);
    for ((p, t), w) in pred.iter().zip(targets).zip(weights) {
        same_shape("score_matching_loss", &p.shape(), t.shape())?;
        parts.push(p.sub(tape.constant(t.clone()))?.square().mean().scale(w));
    }
    let total = parts[0].add(parts[1])?.add(parts[2])?;
    Ok((total, [parts[0], parts[1], parts[2]]))
}

/// Plain-value version of [`score_matching_loss`].
pub fn score_matching_value(pred: &DenseTensors, target: &DenseTensors, weights: [f64; 3]) -> Result<(f64, [f64; 3])> {
    let mut comps = [0.0; 3];
    for (k, (p, t)) in [(&pred.p, &target.p), (&pred.h, &target.h), (&pred.e, &target.e)].into_iter().enumerate() {
        same_shape("score_matching_value", p.shape(), t.shape())?;
        let mse = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.numel().max(1) as f64;
        comps[k] = weights[k] * mse;
    }
    Ok((comps.iter().sum(), comps))
}

fn stack<'t>(rows: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = rows[0].tape();
    let d = rows[0].shape().iter().product::<usize>();
    let parts = rows.iter().map(|r| r.reshape(&[1, d])).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(tape.concat(&parts, 0)?)
}

/// Mean over anchors of `−log softmax_j(−‖a_i − p_j‖²/τ_i²)[i]`, with the
/// positives of the other anchors as negatives.
pub fn contrastive_loss<'t>(anchors: &[Var<'t>], positives: &[Var<'t>], taus: &[f64]) -> Result<Var<'t>> {
    let b = anchors.len();
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    same_shape("contrastive_loss batch", &[b, b], &[positives.len(), taus.len()])?;
    let tape = anchors[0].tape();
    let a = stack(anchors)?;
    let p = stack(positives)?;
    same_shape("contrastive_loss embeddings", &a.shape(), &p.shape())?;
    let an = a.square().sum_axis(1)?.reshape(&[b, 1])?.broadcast(&[b, b])?;
    let pn = p.square().sum_axis(1)?.reshape(&[1, b])?.broadcast(&[b, b])?;
    let dist = an.add(pn)?.sub(a.matmul(p.transpose()?)?.scale(2.0))?;
    let inv = Tensor::new(vec![b, 1], taus.iter().map(|t| -1.0 / (t * t)).collect())?;
    let logits = dist.mul_broadcast(tape.constant(inv))?;
    let picked = logits.log_softmax().mul(tape.constant(Tensor::eye(b)))?;
    Ok(picked.sum().scale(-1.0 / b as f64))
}

/// Plain-value version of [`contrastive_loss`].
pub fn contrastive_value(anchors: &[Tensor], positives: &[Tensor], taus: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let a: Vec<Var> = anchors.iter().map(|t| tape.constant(t.clone())).collect();
    let p: Vec<Var> = positives.iter().map(|t| tape.constant(t.clone())).collect();
    Ok(contrastive_loss(&a, &p, taus)?.item())
}

/// `total = λ₁·l_sc + λ₂·l_co` with the per-component breakdown of `l_sc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sc: f64,
    pub l_co: f64,
    pub total: f64,
    /// `l_sc` split into P, H, E.
    pub components: [f64; 3],
}

pub fn total_loss(l_sc: f64, l_co: f64, lambda1: f64, lambda2: f64) -> Result<LossReport> {
    total_loss_with_components(l_sc, l_co, lambda1, lambda2, [l_sc, 0.0, 0.0])
}

pub fn total_loss_with_components(
    l_sc: f64,
    l_co: f64,
    lambda1: f64,
    lambda2: f64,
    components: [f64; 3],
) -> Result<LossReport> {
    check_weight("lambda1", lambda1)?;
    check_weight("lambda2", lambda2)?;
    if !l_sc.is_finite() {
        return Err(LossError::NonFinite("l_sc"));
    }
    if !l_co.is_finite() {
        return Err(LossError::NonFinite("l_co"));
    }
    Ok(LossReport { l_sc, l_co, total: lambda1 * l_sc + lambda2 * l_co, components })
}

/// Mean absolute error between restored and clean molecules, averaged over the batch.
pub fn restoration_loss(restored: &[DenseTensors], x0: &[DenseTensors]) -> Result<f64> {
    same_shape("restoration_loss batch", &[restored.len()], &[x0.len()])?;
    let mut total = 0.0;
    for (r, x) in restored.iter().zip(x0) {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (a, b) in [(&r.p, &x.p), (&r.h, &x.h), (&r.e, &x.e)] {
            same_shape("restoration_loss", a.shape(), b.shape())?;
            sum += a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).sum::<f64>();
            count += a.numel();
        }
        total += sum / count.max(1) as f64;
    }
    Ok(total / restored.len().max(1) as f64)
}

/// `mean((α(t)·(s − r_t))²)` with `r_t = x_t − x₀`; only defined on the
/// closed-form Gaussian trajectory.
pub fn soft_score_matching_loss(pred: &Tensor, residual: &Tensor, alpha: f64, mode: TrajectoryMode) -> Result<f64> {
    if mode != TrajectoryMode::Continuous {
        return Err(LossError::NonGaussianTrajectory(mode));
    }
    same_shape("soft_score_matching_loss", pred.shape(), residual.shape())?;
    let s = pred.data().iter().zip(residual.data()).map(|(p, r)| (alpha * (p - r)).powi(2)).sum::<f64>();
    Ok(s / pred.numel().max(1) as f64)
}

/// Gradients of `log p(x₀,x_t)`, `log q(x₀)` and `log f(x_t|x₀)` with respect
/// to the logits of a softmax-parameterised joint table.
pub struct DecompositionGradients {
    pub joint: Tensor,
    pub marginal: Tensor,
    pub conditional: Tensor,
}

fn table_gradient(theta: &Tensor, build: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>>) -> Result<Tensor> {
    let tape = Tape::new();
    let th = tape.leaf(theta.clone());
    let out = build(th)?;
    Ok(tape.backward(out)?.wrt(th))
}

/// Log-density helpers on a `k×k` logit table.
fn log_joint<'t>(th: Var<'t>, i: usize, j: usize) -> Result<Var<'t>> {
    let k = th.shape()[0];
    let lp = th.reshape(&[k * k])?.log_softmax();
    Ok(lp.slice(0, i * k + j, i * k + j + 1)?.sum())
}

fn log_marginal<'t>(th: Var<'t>, i: usize) -> Result<Var<'t>> {
    let k = th.shape()[0];
    // q(x₀=i) = Σ_j p(i,j): log-sum-exp of row i minus the global normaliser.
    let lp = th.reshape(&[k * k])?.log_softmax().reshape(&[k, k])?;
    Ok(lp.slice(0, i, i + 1)?.exp().sum().log())
}

fn log_conditional<'t>(th: Var<'t>, i: usize, j: usize) -> Result<Var<'t>> {
    // f(x_t=j | x₀=i): softmax of row i.
    Ok(th.slice(0, i, i + 1)?.log_softmax().slice(1, j, j + 1)?.sum())
}

pub fn decomposition_gradients(theta: &Tensor, i: usize, j: usize) -> Result<DecompositionGradients> {
    if theta.rank() != 2 || theta.shape()[0] != theta.shape()[1] || i >= theta.shape()[0] || j >= theta.shape()[0] {
        return Err(LossError::Shape { what: "decomposition table", left: theta.shape().to_vec(), right: vec![i, j] });
    }
    if !theta.is_finite() {
        return Err(LossError::NotNormalisable);
    }
    Ok(DecompositionGradients {
        joint: table_gradient(theta, |th| log_joint(th, i, j))?,
        marginal: table_gradient(theta, |th| log_marginal(th, i))?,
        conditional: table_gradient(theta, |th| log_conditional(th, i, j))?,
    })
}

/// Max over all cells `(x₀, x_t)` and logits of
/// `|∇log p − (∇log q + ∇log f)|`.
pub fn verify_decomposition(theta: &Tensor) -> Result<f64> {
    let k = theta.shape().first().copied().unwrap_or(0);
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let g = decomposition_gradients(theta, i, j)?;
            for ((a, b), c) in g.joint.data().iter().zip(g.marginal.data()).zip(g.conditional.data()) {
                worst = worst.max((a - (b + c)).abs());
            }
        }
    }
    Ok(worst)
}

/// `log p(x₀=i, x_t=j)` evaluated directly, for finite-difference oracles.
pub fn log_joint_value(theta: &Tensor, i: usize, j: usize) -> f64 {
    let m = theta.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + theta.data().iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    theta.at(&[i, j]) - lse
}
