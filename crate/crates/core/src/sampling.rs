//! Reverse-time generation with the λ-family of reverse processes
//!
//! `dy = [f(t)·y − ½(1+λ²)·g(t)²·s(y,t)]dt + λ·g(t)·dB`, integrated by
//! Euler–Maruyama backwards on a uniform grid from `T = 1` to `t_end`, then
//! quantised back to a molecular graph. `λ = 1` is the reverse SDE and
//! `λ = 0` the probability-flow ODE.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::molgraph::{self, DenseTensors, MolGraphError, MoleculeGraph, BOND_TYPES, CHARGES, ELEMENTS, TYPE_SLOTS};
use crate::network::{NetworkError, ScoreNetwork};
use crate::rng;
use crate::schedule::{ComponentSchedules, NoiseSchedule, ScheduleError, HORIZON};
use crate::trajectory::{remove_mean_rows, sample_noise};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Graph(#[from] MolGraphError),
    #[error("state became non-finite at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("invalid step: t = {t}, dt = {dt}")]
    InvalidStep { t: f64, dt: f64 },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, SamplingError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Reverse-family parameter λ ≥ 0.
    pub lambda: f64,
    pub n_atoms: usize,
    pub num_samples: usize,
    pub seed: u64,
    /// Terminal time ε.
    pub t_end: f64,
    /// 0 = all cores.
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 1000, lambda: 1.0, n_atoms: 9, num_samples: 10, seed: 0, t_end: 1e-3, threads: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.steps == 0 {
            return Err("sampling.steps must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("sampling.lambda = {} must be finite and >= 0", self.lambda));
        }
        if self.n_atoms == 0 || self.n_atoms > molgraph::MAX_ATOMS {
            return Err(format!("sampling.n_atoms = {} outside 1..={}", self.n_atoms, molgraph::MAX_ATOMS));
        }
        if !(self.t_end > 0.0 && self.t_end < HORIZON) {
            return Err(format!("sampling.t_end = {} outside (0, 1)", self.t_end));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (HORIZON - self.t_end) / self.steps as f64
    }
}

/// Anything that supplies per-component scores of a state.
pub trait ScoreModel: Sync {
    fn schedules(&self) -> &ComponentSchedules;
    fn score(&self, state: &DenseTensors, t: f64) -> Result<DenseTensors>;
}

impl ScoreModel for ScoreNetwork {
    fn schedules(&self) -> &ComponentSchedules {
        &self.schedules
    }

    /// The state conditions itself during generation.
    fn score(&self, state: &DenseTensors, t: f64) -> Result<DenseTensors> {
        Ok(self.scores(state, state, t)?)
    }
}

/// One Euler–Maruyama update of a scalar, going from `t` to `t − dt`.
pub fn em_update(y: f64, score: f64, f: f64, g: f64, dt: f64, lambda: f64, z: f64) -> f64 {
    y - (f * y - 0.5 * (1.0 + lambda * lambda) * g * g * score) * dt + lambda * g * dt.sqrt() * z
}

fn update(y: &Tensor, s: &Tensor, z: &Tensor, sched: &NoiseSchedule, t: f64, dt: f64, lambda: f64) -> Result<Tensor> {
    let (f, g) = sched.drift_diffusion(t)?;
    let data = y.data().iter().zip(s.data()).zip(z.data()).map(|((&y, &s), &z)| em_update(y, s, f, g, dt, lambda, z)).collect();
    Ok(Tensor::new(y.shape().to_vec(), data).expect("same shape"))
}

/// One reverse step from `t` to `t − dt` for all three components. Position
/// noise is zero-CoM, edge noise symmetric with a zero diagonal.
pub fn reverse_step(
    state: &DenseTensors,
    t: f64,
    dt: f64,
    model: &impl ScoreModel,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<DenseTensors> {
    if !(t > 0.0 && t <= HORIZON && dt > 0.0) {
        return Err(SamplingError::InvalidStep { t, dt });
    }
    let s = model.score(state, t)?;
    let z = if lambda > 0.0 { sample_noise(state, rng) } else { DenseTensors { h: s.h.map(|_| 0.0), e: s.e.map(|_| 0.0), p: s.p.map(|_| 0.0) } };
    let sc = model.schedules();
    let mut p = update(&state.p, &s.p, &z.p, &sc.p, t, dt, lambda)?;
    remove_mean_rows(&mut p);
    Ok(DenseTensors {
        h: update(&state.h, &s.h, &z.h, &sc.h, t, dt, lambda)?,
        e: update(&state.e, &s.e, &z.e, &sc.e, t, dt, lambda)?,
        p,
    })
}

/// Prior draw at `T`: standard normal scaled by `β(T)` per component,
/// zero-CoM positions and symmetric edges.
pub fn sample_prior(n: usize, schedules: &ComponentSchedules, rng: &mut impl Rng) -> Result<DenseTensors> {
    let z = sample_noise(&DenseTensors::zeros(n), rng);
    let b = |s: &NoiseSchedule| s.alpha_beta(HORIZON).map(|(_, b)| b);
    let (bp, bh, be) = (b(&schedules.p)?, b(&schedules.h)?, b(&schedules.e)?);
    Ok(DenseTensors { h: z.h.map(|v| v * bh), e: z.e.map(|v| v * be), p: z.p.map(|v| v * bp) })
}

/// Integrates from `init` at `T` down to `t_end`.
pub fn integrate(model: &impl ScoreModel, init: DenseTensors, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<DenseTensors> {
    let dt = cfg.dt();
    let mut state = init;
    for k in 0..cfg.steps {
        let t = HORIZON - k as f64 * dt;
        state = reverse_step(&state, t, dt, model, cfg.lambda, rng)?;
        if !state.is_finite() {
            return Err(SamplingError::NonFinite { step: k, t });
        }
    }
    Ok(state)
}

/// Final continuous states for `cfg.num_samples` independent samples.
pub fn generate_dense(model: &impl ScoreModel, cfg: &SamplerConfig) -> Result<Vec<DenseTensors>> {
    cfg.validate().map_err(SamplingError::Config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| SamplingError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        (0..cfg.num_samples)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(cfg.seed, &[i as u64]);
                let init = sample_prior(cfg.n_atoms, model.schedules(), &mut r)?;
                integrate(model, init, cfg, &mut r)
            })
            .collect()
    })
}

pub fn generate(model: &impl ScoreModel, cfg: &SamplerConfig) -> Result<Vec<MoleculeGraph>> {
    generate_dense(model, cfg)?.iter().map(quantize).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax of each node's element and charge slots and of each symmetrised
/// edge; positions are zero-centred. The padding slot is never chosen.
pub fn quantize(x: &DenseTensors) -> Result<MoleculeGraph> {
    let n = x.n();
    let h = x.h.data();
    let w = x.h.shape()[1];
    let mut types = Vec::with_capacity(n);
    let mut charges = Vec::with_capacity(n);
    for i in 0..n {
        let row = &h[i * w..(i + 1) * w];
        types.push(argmax(&row[..ELEMENTS.len()]) as u8);
        charges.push(CHARGES[argmax(&row[TYPE_SLOTS..TYPE_SLOTS + CHARGES.len()])]);
    }
    let e = x.e.data();
    let mut bonds = vec![0u8; n * n];
    let mut avg = [0.0; BOND_TYPES];
    for i in 0..n {
        for j in i + 1..n {
            for (c, a) in avg.iter_mut().enumerate() {
                *a = 0.5 * (e[(i * n + j) * BOND_TYPES + c] + e[(j * n + i) * BOND_TYPES + c]);
            }
            let b = argmax(&avg) as u8;
            bonds[i * n + j] = b;
            bonds[j * n + i] = b;
        }
    }
    Ok(MoleculeGraph::new(types, charges, bonds, x.positions())?)
}

/// Terminal sample moments of the 1D Gaussian toy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub mean: f64,
    pub var: f64,
    pub target_mean: f64,
    pub target_var: f64,
    /// |mean − target| in units of its Monte Carlo standard error.
    pub mean_sigmas: f64,
    pub var_sigmas: f64,
}

/// Data `x₀ ~ N(μ, σ²)` under a linear schedule has the analytic score
/// `−(x − α μ)/(α²σ² + β²)`. Starts `paths` samples from the exact marginal at
/// `T`, integrates the λ-process to `t_end` and compares the moments with
/// the exact marginal there.
pub fn gaussian_reverse_moments(
    mu: f64,
    sigma: f64,
    schedule: &NoiseSchedule,
    lambda: f64,
    paths: usize,
    steps: usize,
    t_end: f64,
    seed: u64,
) -> Result<MomentCheck> {
    let marginal = |t: f64| -> Result<(f64, f64)> {
        let (a, b) = schedule.alpha_beta(t)?;
        Ok((a * mu, a * a * sigma * sigma + b * b))
    };
    let dt = (HORIZON - t_end) / steps as f64;
    let (m0, v0) = marginal(HORIZON)?;
    let mut finals = Vec::with_capacity(paths);
    for i in 0..paths {
        let mut r = rng::stream(seed, &[i as u64]);
        let mut y = m0 + v0.sqrt() * rng::normal(&mut r);
        for k in 0..steps {
            let t = HORIZON - k as f64 * dt;
            let (m, v) = marginal(t)?;
            let (f, g) = schedule.drift_diffusion(t)?;
            let z = if lambda > 0.0 { rng::normal(&mut r) } else { 0.0 };
            y = em_update(y, -(y - m) / v, f, g, dt, lambda, z);
        }
        if !y.is_finite() {
            return Err(SamplingError::NonFinite { step: steps, t: t_end });
        }
        finals.push(y);
    }
    let n = paths as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (tm, tv) = marginal(t_end)?;
    Ok(MomentCheck {
        mean,
        var,
        target_mean: tm,
        target_var: tv,
        mean_sigmas: (mean - tm).abs() / (tv / n).sqrt(),
        var_sigmas: (var - tv).abs() / (tv * (2.0 / (n - 1.0)).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{random_rotation, transform_rows};
    use crate::network::ModelConfig;
    use crate::schedule::NoiseSchedule;
    use crate::toy;

    struct ZeroScore(ComponentSchedules);

    impl ScoreModel for ZeroScore {
        fn schedules(&self) -> &ComponentSchedules {
            &self.0
        }
        fn score(&self, state: &DenseTensors, _t: f64) -> Result<DenseTensors> {
            Ok(DenseTensors { h: state.h.map(|_| 0.0), e: state.e.map(|_| 0.0), p: state.p.map(|_| 0.0) })
        }
    }

    fn small_net(seed: u64) -> ScoreNetwork {
        ScoreNetwork::new(ModelConfig::small(), ComponentSchedules::default(), seed).unwrap()
    }

    #[test]
    fn argmax_ties_and_shift_invariance() {
        assert_eq!(argmax(&[0.3, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let row = [0.1, -2.0, 3.0, 3.0, 0.0];
        let shifted: Vec<f64> = row.iter().map(|v| v + 17.5).collect();
        assert_eq!(argmax(&row), argmax(&shifted));
    }

    #[test]
    fn quantize_inverts_to_dense() {
        for g in toy::corpus() {
            assert_eq!(quantize(&g.to_dense()).unwrap(), g);
        }
    }

    #[test]
    fn quantize_edge_tie_takes_lower_category() {
        let mut x = toy::molecule("water").unwrap().to_dense();
        let n = x.n();
        for c in 0..BOND_TYPES {
            x.e.set(&[0, 1, c], 0.0);
            x.e.set(&[1, 0, c], 0.0);
        }
        x.e.set(&[0, 1, 1], 1.0);
        x.e.set(&[1, 0, 2], 1.0);
        // averaged: channels 1 and 2 both 0.5
        assert_eq!(quantize(&x).unwrap().bond(0, 1), 1);
        assert_eq!(n, 3);
    }

    #[test]
    fn ode_step_is_deterministic() {
        let net = small_net(3);
        let x = sample_prior(5, &net.schedules, &mut rng::stream(1, &[])).unwrap();
        let a = reverse_step(&x, 0.7, 0.01, &net, 0.0, &mut rng::stream(2, &[])).unwrap();
        let b = reverse_step(&x, 0.7, 0.01, &net, 0.0, &mut rng::stream(99, &[])).unwrap();
        assert_eq!(a, b);
        assert!(reverse_step(&x, 0.0, 0.01, &net, 0.0, &mut rng::stream(2, &[])).is_err());
        assert!(reverse_step(&x, 0.5, 0.0, &net, 0.0, &mut rng::stream(2, &[])).is_err());
    }

    /// With zero score under VE the step is pure noise injection of size λ·g·√dt.
    #[test]
    fn zero_score_ve_step_is_noise_injection() {
        let ve = NoiseSchedule::ve(0.01, 1.0).unwrap();
        let model = ZeroScore(ComponentSchedules::uniform(ve));
        let x = DenseTensors::zeros(4);
        let (t, dt, lambda) = (0.6, 0.01, 0.7);
        let mut r1 = rng::stream(5, &[]);
        let y = reverse_step(&x, t, dt, &model, lambda, &mut r1).unwrap();
        let z = sample_noise(&x, &mut rng::stream(5, &[]));
        let (_, g) = ve.drift_diffusion(t).unwrap();
        let k = lambda * g * dt.sqrt();
        for (a, b) in y.h.data().iter().zip(z.h.data()) {
            assert!((a - k * b).abs() < 1e-14);
        }
        for (a, b) in y.e.data().iter().zip(z.e.data()) {
            assert!((a - k * b).abs() < 1e-14);
        }
        for (a, b) in y.p.data().iter().zip(z.p.data()) {
            assert!((a - k * b).abs() < 1e-14);
        }
    }

    #[test]
    fn generation_is_seeded_and_structurally_valid() {
        let net = small_net(4);
        let cfg = SamplerConfig { steps: 20, lambda: 0.0, n_atoms: 5, num_samples: 3, seed: 8, threads: 1, ..SamplerConfig::default() };
        let a = generate(&net, &cfg).unwrap();
        let b = generate(&net, &cfg).unwrap();
        assert_eq!(a, b);
        for g in &a {
            assert_eq!(g.n(), 5);
            for i in 0..5 {
                assert_eq!(g.bond(i, i), 0);
                for j in 0..5 {
                    assert_eq!(g.bond(i, j), g.bond(j, i));
                    assert!((g.bond(i, j) as usize) < BOND_TYPES);
                }
            }
        }
        let sde = SamplerConfig { lambda: 1.0, ..cfg };
        assert_eq!(generate_dense(&net, &sde).unwrap(), generate_dense(&net, &sde).unwrap());
    }

    /// Rotating the prior draw rotates the ODE solution.
    #[test]
    fn ode_generation_is_rotation_covariant() {
        let net = small_net(6);
        let cfg = SamplerConfig { steps: 30, lambda: 0.0, n_atoms: 6, ..SamplerConfig::default() };
        let init = sample_prior(6, &net.schedules, &mut rng::stream(7, &[])).unwrap();
        let r = random_rotation(&mut rng::stream(8, &[]));
        let rotated = DenseTensors { p: transform_rows(&init.p, &r), ..init.clone() };
        let a = integrate(&net, init, &cfg, &mut rng::stream(0, &[])).unwrap();
        let b = integrate(&net, rotated, &cfg, &mut rng::stream(0, &[])).unwrap();
        assert!(transform_rows(&a.p, &r).max_abs_diff(&b.p) < 1e-3);
        assert!(a.h.max_abs_diff(&b.h) < 1e-6);
        assert!(a.e.max_abs_diff(&b.e) < 1e-6);
    }

    #[test]
    fn gaussian_toy_moments_match_for_each_lambda() {
        let s = NoiseSchedule::default();
        for lambda in [0.0, 0.5, 1.0] {
            let m = gaussian_reverse_moments(1.5, 0.4, &s, lambda, 2000, 500, 1e-3, 11).unwrap();
            assert!(m.mean_sigmas < 3.0 && m.var_sigmas < 3.0, "λ={lambda}: {m:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { lambda: -0.1, ..Default::default() }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn quantize_inverts_relaxation_under_permutation(k in 0usize..20, seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                let g = toy::corpus().swap_remove(k);
                let mut order: Vec<usize> = (0..g.n()).collect();
                order.shuffle(&mut rng::stream(seed, &[]));
                let back = quantize(&g.to_dense().permuted(&order)).unwrap();
                prop_assert_eq!(back, g.permuted(&order));
            }

            #[test]
            fn argmax_is_first_maximum(v in proptest::collection::vec(-2i32..3, 1..8)) {
                let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
                let i = argmax(&x);
                prop_assert!(x.iter().all(|&y| y <= x[i]));
                prop_assert!(x[..i].iter().all(|&y| y < x[i]));
            }
        }
    }
}
