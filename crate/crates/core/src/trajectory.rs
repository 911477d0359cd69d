//! Forward trajectory augmentation.
//!
//! The continuous path perturbs every component of a molecule with the
//! closed-form Gaussian kernel of its schedule and records the conditional
//! score `∇ log p(x_t | x_0) = −z/β(t)`. Discrete chains (absorbing and
//! uniform) act on categorical tokens, and the cold-3D path mixes a
//! frame-canonicalised conformer with a uniformly drawn rough conformer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::frames::{self, Vec3};
use crate::molgraph::DenseTensors;
use crate::rng;
use crate::schedule::{ComponentSchedules, NoiseSchedule, ScheduleError};

/// Lower end of the training time range `(t_min, 1]`.
pub const DEFAULT_T_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("conditional score undefined at t = {0}: β(t) vanishes")]
    UndefinedScore(f64),
    #[error("step {t_step} exceeds schedule length {len}")]
    StepOutOfRange { t_step: usize, len: usize },
    #[error("token {token} at position {index} outside 0..={max}")]
    InvalidToken { index: usize, token: usize, max: usize },
    #[error("conformer bank is empty")]
    EmptyBank,
    #[error("noise shape does not match the molecule: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    #[default]
    Continuous,
    Absorbing,
    Uniform,
    Cold3d,
}

impl FromStr for TrajectoryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "absorbing" => Ok(Self::Absorbing),
            "uniform" => Ok(Self::Uniform),
            "cold3d" => Ok(Self::Cold3d),
            other => Err(format!("unknown trajectory mode {other:?}")),
        }
    }
}

impl fmt::Display for TrajectoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Continuous => "continuous",
            Self::Absorbing => "absorbing",
            Self::Uniform => "uniform",
            Self::Cold3d => "cold3d",
        })
    }
}

/// One perturbed molecule with its noise and regression targets.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub x0: DenseTensors,
    pub xt: DenseTensors,
    pub t: f64,
    /// Injected standard-normal noise per component.
    pub z: DenseTensors,
    /// `∇ log p(x_t | x_0)` per component.
    pub score_target: DenseTensors,
}

/// Subtracts the row mean of an n×3 tensor.
pub fn remove_mean_rows(p: &mut Tensor) {
    let n = p.shape()[0];
    if n == 0 {
        return;
    }
    let d = p.data_mut();
    for k in 0..3 {
        let m = (0..n).map(|i| d[i * 3 + k]).sum::<f64>() / n as f64;
        for i in 0..n {
            d[i * 3 + k] -= m;
        }
    }
}

/// Standard-normal edge noise: upper triangle sampled, mirrored, zero diagonal.
pub fn symmetric_edge_noise(n: usize, channels: usize, rng: &mut impl Rng) -> Tensor {
    let mut e = Tensor::zeros(&[n, n, channels]);
    for i in 0..n {
        for j in i + 1..n {
            for c in 0..channels {
                let v = rng::normal(rng);
                e.set(&[i, j, c], v);
                e.set(&[j, i, c], v);
            }
        }
    }
    e
}

/// Noise for all three components: zero-CoM positions, free node features,
/// symmetric zero-diagonal edges.
pub fn sample_noise(like: &DenseTensors, rng: &mut impl Rng) -> DenseTensors {
    let n = like.n();
    let mut p = Tensor::new(vec![n, 3], rng::normals(rng, n * 3)).expect("n×3");
    remove_mean_rows(&mut p);
    let h = Tensor::new(like.h.shape().to_vec(), rng::normals(rng, like.h.numel())).expect("h shape");
    let e = symmetric_edge_noise(n, like.e.shape()[2], rng);
    DenseTensors { h, e, p }
}

fn kernel(x0: &Tensor, z: &Tensor, alpha: f64, beta: f64) -> (Tensor, Tensor) {
    let xt = x0.data().iter().zip(z.data()).map(|(x, z)| alpha * x + beta * z).collect();
    let score = z.data().iter().map(|z| -z / beta).collect();
    (
        Tensor::new(x0.shape().to_vec(), xt).expect("same shape"),
        Tensor::new(x0.shape().to_vec(), score).expect("same shape"),
    )
}

fn check_time(s: &NoiseSchedule, t: f64) -> Result<(f64, f64), TrajectoryError> {
    let (a, b) = s.alpha_beta(t)?;
    if b <= 0.0 {
        return Err(TrajectoryError::UndefinedScore(t));
    }
    Ok((a, b))
}

/// Deterministic part of the continuous perturbation, for a given noise draw.
pub fn perturb_with_noise(
    x0: &DenseTensors,
    t: f64,
    z: DenseTensors,
    schedules: &ComponentSchedules,
) -> Result<TrajectorySample, TrajectoryError> {
    for (name, a, b) in [("P", &x0.p, &z.p), ("H", &x0.h, &z.h), ("E", &x0.e, &z.e)] {
        if a.shape() != b.shape() {
            return Err(TrajectoryError::Shape(format!("{name}: {:?} vs {:?}", a.shape(), b.shape())));
        }
    }
    let (ap, bp) = check_time(&schedules.p, t)?;
    let (ah, bh) = check_time(&schedules.h, t)?;
    let (ae, be) = check_time(&schedules.e, t)?;
    let (pt, sp) = kernel(&x0.p, &z.p, ap, bp);
    let (ht, sh) = kernel(&x0.h, &z.h, ah, bh);
    let (et, se) = kernel(&x0.e, &z.e, ae, be);
    Ok(TrajectorySample {
        x0: x0.clone(),
        xt: DenseTensors { h: ht, e: et, p: pt },
        t,
        z,
        score_target: DenseTensors { h: sh, e: se, p: sp },
    })
}

/// Joint continuous perturbation of (P, H, E) at time `t`.
pub fn perturb_continuous(
    x0: &DenseTensors,
    t: f64,
    rng: &mut impl Rng,
    schedules: &ComponentSchedules,
) -> Result<TrajectorySample, TrajectoryError> {
    for s in [&schedules.p, &schedules.h, &schedules.e] {
        check_time(s, t)?;
    }
    let z = sample_noise(x0, rng);
    perturb_with_noise(x0, t, z, schedules)
}

/// `t ~ Uniform(t_min, 1]`.
pub fn sample_time(rng: &mut impl Rng, t_min: f64) -> f64 {
    let u: f64 = rng.random();
    1.0 - u * (1.0 - t_min)
}

fn check_tokens(tokens: &[usize], max: usize) -> Result<(), TrajectoryError> {
    match tokens.iter().enumerate().find(|(_, &t)| t > max) {
        Some((index, &token)) => Err(TrajectoryError::InvalidToken { index, token, max }),
        None => Ok(()),
    }
}

/// Absorbing chain: at step k each unmasked token moves to the mask state
/// `mask = num_categories` with probability `betas[k]`.
pub fn perturb_absorbing(
    tokens: &[usize],
    num_categories: usize,
    t_step: usize,
    betas: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<usize>, TrajectoryError> {
    if t_step > betas.len() {
        return Err(TrajectoryError::StepOutOfRange { t_step, len: betas.len() });
    }
    check_tokens(tokens, num_categories)?;
    let mask = num_categories;
    let mut out = tokens.to_vec();
    for &beta in &betas[..t_step] {
        for tok in out.iter_mut() {
            if *tok != mask && rng.random::<f64>() < beta {
                *tok = mask;
            }
        }
    }
    Ok(out)
}

/// Uniform chain: at step k each token is resampled uniformly over
/// `num_classes` with probability `1 − alphas[k]`.
pub fn perturb_uniform(
    tokens: &[usize],
    num_classes: usize,
    t_step: usize,
    alphas: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<usize>, TrajectoryError> {
    if t_step > alphas.len() {
        return Err(TrajectoryError::StepOutOfRange { t_step, len: alphas.len() });
    }
    if num_classes == 0 {
        return Err(TrajectoryError::InvalidToken { index: 0, token: 0, max: 0 });
    }
    check_tokens(tokens, num_classes - 1)?;
    let mut out = tokens.to_vec();
    for &alpha in &alphas[..t_step] {
        for tok in out.iter_mut() {
            if rng.random::<f64>() >= alpha {
                *tok = rng.random_range(0..num_classes);
            }
        }
    }
    Ok(out)
}

/// Row-stochastic `(1−β)I + β·1 e_mᵀ` over `num_categories + 1` states.
pub fn absorbing_matrix(num_categories: usize, beta: f64) -> Vec<Vec<f64>> {
    let d = num_categories + 1;
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let stay = if i == j { 1.0 - beta } else { 0.0 };
                    stay + if j == num_categories { beta } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Row-stochastic `αI + (1−α)11ᵀ/d`.
pub fn uniform_matrix(d: usize, alpha: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { alpha } else { 0.0 } + (1.0 - alpha) / d as f64).collect())
        .collect()
}

/// Rough conformers of one molecule, each zero-centred and expressed in
/// its own global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformerBank {
    pub conformers: Vec<Vec<[f64; 3]>>,
    pub energies: Vec<f64>,
}

/// Positions projected by the inverse of their global frame.
pub fn canonicalize(positions: &[[f64; 3]], cutoff: f64) -> Vec<[f64; 3]> {
    let pts = frames::to_vec3(positions);
    let g = frames::global_frame(&frames::node_frames(&pts, cutoff));
    pts.iter().map(|p| g.project(p).into()).collect()
}

fn centered(mut p: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    crate::molgraph::center(&mut p);
    p
}

impl ConformerBank {
    /// Stores each conformer centred and canonicalised.
    pub fn new(conformers: Vec<Vec<[f64; 3]>>, energies: Vec<f64>, cutoff: f64) -> Self {
        assert_eq!(conformers.len(), energies.len(), "one energy per conformer");
        let conformers = conformers.into_iter().map(|c| canonicalize(&centered(c), cutoff)).collect();
        Self { conformers, energies }
    }

    /// Desk-scale stand-in for force-field conformers: ground truth plus
    /// fixed-seed Gaussian displacements at each noise level (Å). The energy
    /// is the mean squared displacement.
    pub fn from_ground_truth(positions: &[[f64; 3]], levels: &[f64], seed: u64, cutoff: f64) -> Self {
        let mut confs = Vec::with_capacity(levels.len());
        let mut energies = Vec::with_capacity(levels.len());
        for (k, &level) in levels.iter().enumerate() {
            let mut r = rng::stream(seed, &[k as u64]);
            let c: Vec<[f64; 3]> = positions
                .iter()
                .map(|p| [p[0] + level * rng::normal(&mut r), p[1] + level * rng::normal(&mut r), p[2] + level * rng::normal(&mut r)])
                .collect();
            let c = centered(c);
            let msd = c
                .iter()
                .zip(positions)
                .map(|(a, b)| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>())
                .sum::<f64>()
                / positions.len() as f64;
            confs.push(c);
            energies.push(msd);
        }
        Self::new(confs, energies, cutoff)
    }

    pub fn len(&self) -> usize {
        self.conformers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conformers.is_empty()
    }
}

pub const DEFAULT_BANK_LEVELS: [f64; 3] = [0.05, 0.1, 0.2];

/// `α·F₀⁻¹P₀ + β·U`, with `U` drawn uniformly from the bank.
pub fn perturb_cold_3d(
    p0: &[[f64; 3]],
    bank: &ConformerBank,
    alpha: f64,
    beta: f64,
    rng: &mut impl Rng,
    cutoff: f64,
) -> Result<Vec<[f64; 3]>, TrajectoryError> {
    if bank.is_empty() {
        return Err(TrajectoryError::EmptyBank);
    }
    let pick = &bank.conformers[rng.random_range(0..bank.len())];
    if pick.len() != p0.len() {
        return Err(TrajectoryError::Shape(format!("bank conformer has {} atoms, molecule {}", pick.len(), p0.len())));
    }
    let base = canonicalize(p0, cutoff);
    Ok(base
        .iter()
        .zip(pick)
        .map(|(a, u)| {
            let v = Vec3::from(*a) * alpha + Vec3::from(*u) * beta;
            v.into()
        })
        .collect())
}

/// Cold-3D perturbation with `(α, β)` read from a schedule at time `t`.
pub fn perturb_cold_3d_at(
    p0: &[[f64; 3]],
    bank: &ConformerBank,
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut impl Rng,
    cutoff: f64,
) -> Result<Vec<[f64; 3]>, TrajectoryError> {
    let (a, b) = schedule.alpha_beta(t)?;
    perturb_cold_3d(p0, bank, a, b, rng, cutoff)
}
