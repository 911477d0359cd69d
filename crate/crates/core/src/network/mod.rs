//! Twin-encoder score network.
//!
//! Two invariant message-passing encoders read the clean conditioner and the
//! noisy input. Their node features are fused with a Fourier time embedding,
//! mixed by a GCN over an edge-conditioned weighted adjacency, and decoded by
//! three heads: an equivariant 3D head lifted through node-wise frames, an
//! attention-based edge head and a node-feature head. A projection head maps
//! the pooled representation onto the unit sphere for the contrastive term.
//!
//! The heads predict the injected noise; scores are `−ε̂/β(t)`.

mod params;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::frames::{self, Frame, DEFAULT_CUTOFF};
use crate::molgraph::{DenseTensors, ATOM_FEATURES, BOND_TYPES, TYPE_SLOTS};
use crate::schedule::{ComponentSchedules, ScheduleError};

pub use params::{ModelParams, ParamVars, CLEAN, NOISY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("parameter {0:?} missing")]
    MissingParam(String),
    #[error("parameter {0:?} not part of this configuration")]
    UnexpectedParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("score undefined at t = {0}: β(t) vanishes")]
    ZeroNoise(f64),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Node feature width L.
    pub hidden: usize,
    /// Message-passing rounds K.
    pub rounds: usize,
    pub gcn_layers: usize,
    pub heads: usize,
    pub time_dim: usize,
    pub proj_dim: usize,
    /// Gaussian radial basis size.
    pub rbf: usize,
    /// Message-passing cutoff (Å).
    pub cutoff: f64,
    pub share_encoders: bool,
    #[serde(default)]
    pub parameterization: Parameterization,
}

/// What the H and E heads predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// Softmax estimate of the clean one-hot data, converted to noise.
    #[default]
    Clean,
    /// Raw noise regression.
    Noise,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            rounds: 3,
            gcn_layers: 3,
            heads: 4,
            time_dim: 64,
            proj_dim: 64,
            rbf: 16,
            cutoff: DEFAULT_CUTOFF,
            share_encoders: false,
            parameterization: Parameterization::Clean,
        }
    }
}

impl ModelConfig {
    /// A narrow configuration for tests and quick runs.
    pub fn small() -> Self {
        Self { hidden: 32, rounds: 2, gcn_layers: 2, heads: 2, time_dim: 16, proj_dim: 16, rbf: 12, ..Self::default() }
    }

    pub fn edge_hidden(&self) -> usize {
        (self.hidden / 2).max(8)
    }

    pub fn head_dim(&self) -> usize {
        (self.hidden / self.heads.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NetworkError::Config(m.to_string()));
        if self.hidden == 0 || self.proj_dim == 0 || self.rbf < 2 {
            return bad("hidden, proj_dim must be positive and rbf >= 2");
        }
        if self.heads == 0 || self.heads > self.hidden {
            return bad("need 1 <= heads <= hidden");
        }
        if self.time_dim < 4 || self.time_dim % 2 != 0 {
            return bad("time_dim must be even and >= 4");
        }
        if !(self.cutoff > 0.0) {
            return bad("cutoff must be positive");
        }
        Ok(())
    }
}

/// Geometric frequencies from 0.5 to 64 cycles per unit time.
pub fn fourier_frequencies(dim: usize) -> Vec<f64> {
    let m = dim / 2;
    if m <= 1 {
        return vec![0.5; m];
    }
    (0..m).map(|k| 0.5 * 128f64.powf(k as f64 / (m - 1) as f64)).collect()
}

/// `[sin(2π f_k t) ‖ cos(2π f_k t)]`.
pub fn fourier_embed(t: f64, dim: usize) -> Tensor {
    let f = fourier_frequencies(dim);
    let tau = 2.0 * std::f64::consts::PI;
    let mut v: Vec<f64> = f.iter().map(|f| (tau * f * t).sin()).collect();
    v.extend(f.iter().map(|f| (tau * f * t).cos()));
    Tensor::vector(v)
}

/// Gaussian radial features (n²×R) and the smooth cosine cutoff envelope
/// (n²×1, zero on the diagonal and beyond the cutoff).
pub fn radial_features(positions: &[[f64; 3]], rbf: usize, cutoff: f64) -> (Tensor, Tensor) {
    let n = positions.len();
    let gamma = ((rbf - 1) as f64 / cutoff).powi(2);
    let mut feats = Vec::with_capacity(n * n * rbf);
    let mut env = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let r = (0..3).map(|k| (positions[i][k] - positions[j][k]).powi(2)).sum::<f64>().sqrt();
            let c = if i == j || r >= cutoff { 0.0 } else { 0.5 * ((std::f64::consts::PI * r / cutoff).cos() + 1.0) };
            env.push(c);
            for k in 0..rbf {
                let mu = cutoff * k as f64 / (rbf - 1) as f64;
                feats.push(c * (-gamma * (r - mu).powi(2)).exp());
            }
        }
    }
    (Tensor::from_parts(vec![n * n, rbf], feats), Tensor::from_parts(vec![n * n, 1], env))
}

fn offdiag_mask(n: usize) -> Tensor {
    Tensor::from_parts(vec![n * n, 1], (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect())
}

fn linear<'t>(x: Var<'t>, pv: &ParamVars<'t>, prefix: &str) -> Result<Var<'t>> {
    Ok(x.matmul(pv.get(&format!("{prefix}.w"))?)?.add_broadcast(pv.get(&format!("{prefix}.b"))?)?)
}

/// `Linear → SiLU → Linear`.
fn mlp2<'t>(x: Var<'t>, pv: &ParamVars<'t>, prefix: &str) -> Result<Var<'t>> {
    linear(linear(x, pv, &format!("{prefix}.0"))?.silu(), pv, &format!("{prefix}.1"))
}

fn check_n(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(NetworkError::Dimension(format!("{what}: {a} vs {b} atoms")));
    }
    Ok(())
}

/// Invariant node features of one encoder branch (n×L).
pub fn encode<'t>(pv: &ParamVars<'t>, branch: &str, x: &DenseTensors, cfg: &ModelConfig) -> Result<Var<'t>> {
    let tape = pv.tape();
    let n = x.n();
    let (rbf, env) = radial_features(&x.positions(), cfg.rbf, cfg.cutoff);
    let rbf = tape.constant(rbf);
    let env = tape.constant(env);
    let h = tape.constant(x.h.clone());
    let mut f = linear(h, pv, &format!("{branch}.input"))?;
    for r in 0..cfg.rounds {
        let filter = linear(rbf, pv, &format!("{branch}.round{r}.filter"))?.silu().mul_broadcast(env)?;
        let filter = filter.reshape(&[n, n, cfg.hidden])?;
        let m = filter.mul(f.broadcast(&[n, n, cfg.hidden])?)?.sum_axis(1)?;
        let upd = tape.concat(&[m, h], 1)?;
        let upd = linear(upd, pv, &format!("{branch}.round{r}.update0"))?.silu();
        f = f.add(linear(upd, pv, &format!("{branch}.round{r}.update1"))?)?;
    }
    Ok(f)
}

/// Row-wise MLP of `[Emd(t) ‖ f₀ ‖ f_t]`.
pub fn fuse<'t>(pv: &ParamVars<'t>, f0: Var<'t>, ft: Var<'t>, emb: &Tensor) -> Result<Var<'t>> {
    let (s0, st) = (f0.shape(), ft.shape());
    if s0 != st {
        return Err(NetworkError::Dimension(format!("fuse inputs {s0:?} vs {st:?}")));
    }
    let e = pv.tape().constant(emb.clone()).broadcast(&[s0[0], emb.numel()])?;
    mlp2(pv.tape().concat(&[e, f0, ft], 1)?, pv, "fuse_mlp")
}

/// Per-pair constant features `[Emd(t) ‖ E₀ij ‖ E_tij]`, n²×(d_t+2e).
fn edge_inputs(e0: &Tensor, et: &Tensor, emb: &Tensor) -> Tensor {
    let n = e0.shape()[0];
    let c = e0.shape()[2];
    let mut d = Vec::with_capacity(n * n * (emb.numel() + 2 * c));
    for ij in 0..n * n {
        d.extend_from_slice(emb.data());
        d.extend_from_slice(&e0.data()[ij * c..(ij + 1) * c]);
        d.extend_from_slice(&et.data()[ij * c..(ij + 1) * c]);
    }
    Tensor::from_parts(vec![n * n, emb.numel() + 2 * c], d)
}

fn check_edges(e0: &Tensor, et: &Tensor) -> Result<usize> {
    if e0.shape() != et.shape() || e0.rank() != 3 || e0.shape()[0] != e0.shape()[1] {
        return Err(NetworkError::Dimension(format!("edge tensors {:?} vs {:?}", e0.shape(), et.shape())));
    }
    Ok(e0.shape()[0])
}

/// Symmetric, zero-diagonal weighted adjacency (n×n).
pub fn edge_condition<'t>(pv: &ParamVars<'t>, e0: &Tensor, et: &Tensor, emb: &Tensor) -> Result<Var<'t>> {
    let n = check_edges(e0, et)?;
    let tape = pv.tape();
    let w = mlp2(tape.constant(edge_inputs(e0, et, emb)), pv, "edge_mlp")?;
    let w = w.mul(tape.constant(offdiag_mask(n)))?.reshape(&[n, n])?;
    Ok(w.add(w.transpose()?)?.scale(0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

/// Node features and their mean pool.
#[derive(Debug, Clone, Copy)]
pub struct LatentRepresentation<'t> {
    pub node_h: Var<'t>,
    pub pooled: Var<'t>,
}

/// `D^{-1/2}(W + I)D^{-1/2}` with `D = 1 + Σ_j |W_ij|`.
pub fn normalized_adjacency<'t>(w: Var<'t>) -> Result<Var<'t>> {
    let tape = w.tape();
    let n = w.shape()[0];
    let deg = w.abs().sum_axis(1)?.add(tape.constant(Tensor::full(&[n], 1.0)))?;
    let dinv = tape.constant(Tensor::full(&[n], 1.0)).div(deg.sqrt())?;
    let a = w.add(tape.constant(Tensor::eye(n)))?;
    Ok(a.mul_broadcast(dinv.reshape(&[n, 1])?)?.mul_broadcast(dinv.reshape(&[1, n])?)?)
}

/// Residual GCN layers `h ← act(Â h Θ + b + h)`.
pub fn fuse_gcn<'t>(
    pv: &ParamVars<'t>,
    node: Var<'t>,
    w: Var<'t>,
    layers: usize,
    act: Activation,
) -> Result<LatentRepresentation<'t>> {
    check_n("fuse_gcn", node.shape()[0], w.shape()[0])?;
    let a = normalized_adjacency(w)?;
    let mut h = node;
    for k in 0..layers {
        let z = linear(a.matmul(h)?, pv, &format!("gcn.{k}"))?.add(h)?;
        h = match act {
            Activation::Silu => z.silu(),
            Activation::Identity => z,
        };
    }
    Ok(LatentRepresentation { node_h: h, pooled: h.mean_axis(0)? })
}

/// Per-node frame matrices as an n×3×3 tensor whose `[i, k, :]` is `e_k` of node `i`.
pub fn frame_tensor(frames: &[Frame]) -> Tensor {
    let d = frames.iter().flat_map(|f| f.axes().into_iter().flat_map(|e| [e.x, e.y, e.z])).collect();
    Tensor::from_parts(vec![frames.len(), 3, 3], d)
}

/// Invariant coefficients `(h₁, h₂, h₃)` per node (n×3).
pub fn head_3d_coefficients<'t>(pv: &ParamVars<'t>, latent: &LatentRepresentation<'t>) -> Result<Var<'t>> {
    mlp2(latent.node_h, pv, "head_3d_mlp")
}

/// `Σ_k c_k e_k` per node, then projected to zero centre of mass.
pub fn tensorize_field<'t>(coeffs: Var<'t>, frames: &[Frame]) -> Result<Var<'t>> {
    let n = frames.len();
    check_n("tensorize", coeffs.shape()[0], n)?;
    let fm = coeffs.tape().constant(frame_tensor(frames));
    let v = coeffs.reshape(&[n, 3, 1])?.broadcast(&[n, 3, 3])?.mul(fm)?.sum_axis(1)?;
    Ok(v.sub(v.mean_axis(0)?.broadcast(&[n, 3])?)?)
}

/// Equivariant n×3 output of the 3D head.
pub fn score_3d<'t>(pv: &ParamVars<'t>, latent: &LatentRepresentation<'t>, frames: &[Frame]) -> Result<Var<'t>> {
    tensorize_field(head_3d_coefficients(pv, latent)?, frames)
}

/// Multi-head attention maps `softmax(QKᵀ/√d)`, one n×n map per head.
pub fn attention_maps<'t>(pv: &ParamVars<'t>, latent: &LatentRepresentation<'t>, heads: usize) -> Result<Vec<Var<'t>>> {
    let h = latent.node_h;
    (0..heads)
        .map(|k| {
            let q = h.matmul(pv.get(&format!("head_2d_attention.q{k}"))?)?;
            let kk = h.matmul(pv.get(&format!("head_2d_attention.k{k}"))?)?;
            let scale = 1.0 / (q.shape()[1] as f64).sqrt();
            Ok(q.matmul(kk.transpose()?)?.scale(scale).softmax())
        })
        .collect()
}

/// Symmetric, zero-diagonal n×n×e edge output from attention maps and edge inputs.
pub fn score_2d<'t>(
    pv: &ParamVars<'t>,
    latent: &LatentRepresentation<'t>,
    heads: usize,
    e0: &Tensor,
    et: &Tensor,
    emb: &Tensor,
) -> Result<Var<'t>> {
    let n = check_edges(e0, et)?;
    check_n("score_2d", latent.node_h.shape()[0], n)?;
    let tape = pv.tape();
    let maps = attention_maps(pv, latent, heads)?;
    let cols = |transposed: bool| -> Result<Var<'t>> {
        let parts = maps
            .iter()
            .map(|a| {
                let a = if transposed { a.transpose()? } else { *a };
                a.reshape(&[n * n, 1])
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(tape.concat(&parts, 1)?)
    };
    let rest = tape.constant(edge_inputs(e0, et, emb));
    let fwd = mlp2(tape.concat(&[cols(false)?, rest], 1)?, pv, "head_2d_mlp")?;
    let bwd = mlp2(tape.concat(&[cols(true)?, rest], 1)?, pv, "head_2d_mlp")?;
    let out = fwd.add(bwd)?.scale(0.5).mul_broadcast(tape.constant(offdiag_mask(n)))?;
    Ok(out.reshape(&[n, n, BOND_TYPES])?)
}

/// Row-wise node-feature output (n×h).
pub fn score_h<'t>(pv: &ParamVars<'t>, latent: &LatentRepresentation<'t>) -> Result<Var<'t>> {
    mlp2(latent.node_h, pv, "head_h_mlp")
}

/// Unit-norm projection of the pooled representation.
pub fn project<'t>(pv: &ParamVars<'t>, latent: &LatentRepresentation<'t>) -> Result<Var<'t>> {
    let l = latent.pooled.shape()[0];
    let z = mlp2(latent.pooled.reshape(&[1, l])?, pv, "projection_head")?;
    let d = z.shape()[1];
    let z = z.reshape(&[d])?;
    let norm = z.square().sum().add(pv.tape().scalar(1e-24))?.sqrt();
    Ok(z.div(norm.broadcast(&[d])?)?)
}

/// Source of the per-node frames in the 3D head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameMode {
    #[default]
    Local,
    /// Identity frames everywhere; breaks equivariance (negative control).
    Identity,
}

/// Noise predictions for the three components, plus the latent they came from.
pub struct NoiseOutput<'t> {
    pub p: Var<'t>,
    pub h: Var<'t>,
    pub e: Var<'t>,
    pub latent: LatentRepresentation<'t>,
}

/// Configured model: architecture, parameters and the schedules that turn
/// noise predictions into scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub schedules: ComponentSchedules,
    pub frame_cutoff: f64,
    pub frame_mode: FrameMode,
}

impl ScoreNetwork {
    pub fn new(config: ModelConfig, schedules: ComponentSchedules, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: ModelParams::init(&config, seed),
            schedules,
            frame_cutoff: DEFAULT_CUTOFF,
            frame_mode: FrameMode::Local,
        })
    }

    pub fn with_params(config: ModelConfig, params: ModelParams, schedules: ComponentSchedules) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Self { config, params, schedules, frame_cutoff: DEFAULT_CUTOFF, frame_mode: FrameMode::Local })
    }

    fn noisy_branch(&self) -> &'static str {
        if self.config.share_encoders {
            CLEAN
        } else {
            NOISY
        }
    }

    pub fn frames_for(&self, noisy: &DenseTensors) -> Vec<Frame> {
        match self.frame_mode {
            FrameMode::Identity => vec![Frame::identity(); noisy.n()],
            FrameMode::Local => {
                let mut p = noisy.positions();
                crate::molgraph::center(&mut p);
                frames::node_frames(&frames::to_vec3(&p), self.frame_cutoff)
            }
        }
    }

    /// Latent representation of `noisy` at time `t` given the conditioner.
    pub fn latent<'t>(
        &self,
        pv: &ParamVars<'t>,
        cond: &DenseTensors,
        noisy: &DenseTensors,
        t: f64,
    ) -> Result<LatentRepresentation<'t>> {
        check_n("conditioner vs input", cond.n(), noisy.n())?;
        let emb = fourier_embed(t, self.config.time_dim);
        let f0 = encode(pv, CLEAN, cond, &self.config)?;
        let ft = encode(pv, self.noisy_branch(), noisy, &self.config)?;
        let node = fuse(pv, f0, ft, &emb)?;
        let w = edge_condition(pv, &cond.e, &noisy.e, &emb)?;
        fuse_gcn(pv, node, w, self.config.gcn_layers, Activation::Silu)
    }

    /// Noise predictions ε̂ for P, H and E.
    pub fn predict_noise<'t>(
        &self,
        pv: &ParamVars<'t>,
        cond: &DenseTensors,
        noisy: &DenseTensors,
        t: f64,
    ) -> Result<NoiseOutput<'t>> {
        let latent = self.latent(pv, cond, noisy, t)?;
        let emb = fourier_embed(t, self.config.time_dim);
        let p = score_3d(pv, &latent, &self.frames_for(noisy))?;
        let e = score_2d(pv, &latent, self.config.heads, &cond.e, &noisy.e, &emb)?;
        let h = score_h(pv, &latent)?;
        let (h, e) = match self.config.parameterization {
            Parameterization::Noise => (h, e),
            Parameterization::Clean => self.clean_to_noise(pv.tape(), h, e, noisy, t)?,
        };
        Ok(NoiseOutput { p, h, e, latent })
    }

    /// Softmax logits into x̂₀ per slot group, then `ε̂ = (x_t − α x̂₀)/β`.
    fn clean_to_noise<'t>(
        &self,
        tape: &'t Tape,
        h: Var<'t>,
        e: Var<'t>,
        noisy: &DenseTensors,
        t: f64,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (ah, bh) = self.schedules.h.alpha_beta(t)?;
        let (ae, be) = self.schedules.e.alpha_beta(t)?;
        if bh <= 0.0 || be <= 0.0 {
            return Err(NetworkError::ZeroNoise(t));
        }
        let n = noisy.h.shape()[0];
        let types = h.slice(1, 0, TYPE_SLOTS)?.softmax();
        let charges = h.slice(1, TYPE_SLOTS, ATOM_FEATURES)?.softmax();
        let h0 = tape.concat(&[types, charges], 1)?;
        let eps_h = tape.constant(noisy.h.clone()).sub(h0.scale(ah))?.scale(1.0 / bh);
        let e0 = e.reshape(&[n * n, BOND_TYPES])?.softmax().mul_broadcast(tape.constant(offdiag_mask(n)))?;
        let et = tape.constant(noisy.e.clone()).reshape(&[n * n, BOND_TYPES])?;
        let eps_e = et.sub(e0.scale(ae))?.scale(1.0 / be).reshape(&[n, n, BOND_TYPES])?;
        Ok((eps_h, eps_e))
    }

    /// `β(t)` per component (P, H, E).
    pub fn noise_scales(&self, t: f64) -> Result<[f64; 3]> {
        let s = &self.schedules;
        let b = [s.p.alpha_beta(t)?.1, s.h.alpha_beta(t)?.1, s.e.alpha_beta(t)?.1];
        if b.iter().any(|&b| b <= 0.0) {
            return Err(NetworkError::ZeroNoise(t));
        }
        Ok(b)
    }

    /// Scores `−ε̂/β(t)` as plain tensors.
    pub fn scores(&self, cond: &DenseTensors, noisy: &DenseTensors, t: f64) -> Result<DenseTensors> {
        let b = self.noise_scales(t)?;
        let tape = Tape::new();
        let pv = self.params.bind(&tape, false);
        let out = self.predict_noise(&pv, cond, noisy, t)?;
        Ok(DenseTensors {
            p: out.p.value().map(|v| -v / b[0]),
            h: out.h.value().map(|v| -v / b[1]),
            e: out.e.value().map(|v| -v / b[2]),
        })
    }

    /// Contrastive embedding of a state at time `t` (the state is its own conditioner).
    pub fn embed<'t>(&self, pv: &ParamVars<'t>, x: &DenseTensors, t: f64) -> Result<Var<'t>> {
        project(pv, &self.latent(pv, x, x, t)?)
    }

    pub fn embedding(&self, x: &DenseTensors, t: f64) -> Result<Tensor> {
        let tape = Tape::new();
        let pv = self.params.bind(&tape, false);
        Ok(self.embed(&pv, x, t)?.value())
    }

    /// Pooled representation of clean data (the state conditions itself at `t = 0`).
    pub fn representation(&self, x: &DenseTensors) -> Result<Tensor> {
        let tape = Tape::new();
        let pv = self.params.bind(&tape, false);
        Ok(self.latent(&pv, x, x, 0.0)?.pooled.value())
    }
}

#[cfg(test)]
mod tests;
