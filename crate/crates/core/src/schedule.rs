//! Noise schedules giving the closed-form forward perturbation
//! `x_t = α(t)·x_0 + β(t)·z` and the matching SDE coefficients
//! `dx = f(t)·x dt + g(t) dw` on the unit horizon `t ∈ [0, 1]`.

use serde::{Deserialize, Serialize};

pub const HORIZON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("time {0} outside [0, {HORIZON}]")]
    TimeOutOfRange(f64),
    #[error("invalid schedule parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSchedule {
    /// Variance preserving, linear rate `β_min + (β_max − β_min)·t`.
    Vp { beta_min: f64, beta_max: f64 },
    /// Variance exploding, geometric `σ_min·(σ_max/σ_min)^t`.
    Ve { sigma_min: f64, sigma_max: f64 },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::Vp { beta_min: 0.1, beta_max: 10.0 }
    }
}

impl NoiseSchedule {
    pub fn vp(beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        if !(beta_min >= 0.0 && beta_max >= beta_min && beta_max.is_finite()) {
            return Err(ScheduleError::InvalidParameters(format!(
                "need 0 <= beta_min <= beta_max, got {beta_min}, {beta_max}"
            )));
        }
        Ok(Self::Vp { beta_min, beta_max })
    }

    pub fn ve(sigma_min: f64, sigma_max: f64) -> Result<Self, ScheduleError> {
        if !(sigma_min > 0.0 && sigma_max >= sigma_min && sigma_max.is_finite()) {
            return Err(ScheduleError::InvalidParameters(format!(
                "need 0 < sigma_min <= sigma_max, got {sigma_min}, {sigma_max}"
            )));
        }
        Ok(Self::Ve { sigma_min, sigma_max })
    }

    fn check(t: f64) -> Result<(), ScheduleError> {
        if !(0.0..=HORIZON).contains(&t) {
            return Err(ScheduleError::TimeOutOfRange(t));
        }
        Ok(())
    }

    /// `(α(t), β(t))` of the Gaussian transition kernel.
    pub fn alpha_beta(&self, t: f64) -> Result<(f64, f64), ScheduleError> {
        Self::check(t)?;
        Ok(match *self {
            Self::Vp { beta_min, beta_max } => {
                let integral = beta_min * t + 0.5 * (beta_max - beta_min) * t * t;
                let alpha = (-0.5 * integral).exp();
                // 1 − α² = −expm1(−∫β)
                (alpha, (-(-integral).exp_m1()).sqrt())
            }
            Self::Ve { sigma_min, sigma_max } => (1.0, sigma_min * (sigma_max / sigma_min).powf(t)),
        })
    }

    /// `(f(t), g(t))`: linear drift coefficient and diffusion coefficient.
    pub fn drift_diffusion(&self, t: f64) -> Result<(f64, f64), ScheduleError> {
        Self::check(t)?;
        Ok(match *self {
            Self::Vp { beta_min, beta_max } => {
                let rate = beta_min + (beta_max - beta_min) * t;
                (-0.5 * rate, rate.sqrt())
            }
            Self::Ve { sigma_min, sigma_max } => {
                let (_, sigma) = self.alpha_beta(t)?;
                (0.0, sigma * (2.0 * (sigma_max / sigma_min).ln()).sqrt())
            }
        })
    }

    /// Whether `β(0) = 0`, making the conditional score undefined at `t = 0`.
    pub fn vanishes_at_zero(&self) -> bool {
        matches!(self, Self::Vp { .. })
    }
}

/// One schedule per perturbed component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentSchedules {
    pub p: NoiseSchedule,
    pub h: NoiseSchedule,
    pub e: NoiseSchedule,
}

impl ComponentSchedules {
    pub fn uniform(s: NoiseSchedule) -> Self {
        Self { p: s, h: s, e: s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn default_vp() -> NoiseSchedule {
        NoiseSchedule::vp(0.1, 10.0).unwrap()
    }

    #[test]
    fn vp_starts_at_identity() {
        assert_eq!(default_vp().alpha_beta(0.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn vp_preserves_variance_on_grid() {
        let s = default_vp();
        for k in 0..=1000 {
            let (a, b) = s.alpha_beta(k as f64 / 1000.0).unwrap();
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ve_endpoint() {
        let s = NoiseSchedule::ve(0.01, 1.0).unwrap();
        let (a, b) = s.alpha_beta(1.0).unwrap();
        assert_eq!(a, 1.0);
        assert!((b - 1.0).abs() < 1e-15);
        assert_eq!(s.alpha_beta(0.0).unwrap().1, 0.01);
        assert_eq!(s.drift_diffusion(0.3).unwrap().0, 0.0);
    }

    #[test]
    fn monotone_on_grid() {
        for s in [default_vp(), NoiseSchedule::ve(0.01, 50.0).unwrap()] {
            let mut prev = s.alpha_beta(0.0).unwrap();
            for k in 1..=1000 {
                let cur = s.alpha_beta(k as f64 / 1000.0).unwrap();
                assert!(cur.0 <= prev.0 && cur.1 >= prev.1, "{s:?} at step {k}");
                prev = cur;
            }
        }
    }

    #[test]
    fn out_of_range_time() {
        assert_eq!(default_vp().alpha_beta(1.5), Err(ScheduleError::TimeOutOfRange(1.5)));
        assert!(default_vp().drift_diffusion(-0.1).is_err());
        assert!(NoiseSchedule::vp(2.0, 1.0).is_err());
        assert!(NoiseSchedule::ve(0.0, 1.0).is_err());
    }

    #[test]
    fn vp_coefficients() {
        let (f, g) = default_vp().drift_diffusion(0.5).unwrap();
        let rate = 0.1 + 9.9 * 0.5;
        assert_eq!(f, -0.5 * rate);
        assert_eq!(g, rate.sqrt());
    }

    /// dα/dt = f(t)·α(t), checked by central differences.
    #[test]
    fn drift_matches_alpha_derivative() {
        let h = 1e-6;
        for s in [default_vp(), NoiseSchedule::ve(0.01, 1.0).unwrap()] {
            for k in 1..100 {
                let t = k as f64 / 100.0;
                let da = (s.alpha_beta(t + h).unwrap().0 - s.alpha_beta(t - h).unwrap().0) / (2.0 * h);
                let (f, _) = s.drift_diffusion(t).unwrap();
                assert!((da - f * s.alpha_beta(t).unwrap().0).abs() < 1e-6);
            }
        }
    }

    /// Euler–Maruyama simulation of (f, g) reproduces the closed-form marginals.
    #[test]
    fn euler_maruyama_matches_marginals() {
        let s = default_vp();
        let (paths, steps, x0) = (10_000usize, 1000usize, 1.5);
        let dt = 1.0 / steps as f64;
        let checkpoints = [250usize, 500, 1000];
        let mut rng = rng::stream(11, &[]);
        let mut xs = vec![x0; paths];
        let mut k = 0;
        for step in 0..steps {
            let (f, g) = s.drift_diffusion(step as f64 * dt).unwrap();
            for x in xs.iter_mut() {
                *x += f * *x * dt + g * dt.sqrt() * rng::normal(&mut rng);
            }
            if step + 1 == checkpoints[k] {
                let t = checkpoints[k] as f64 * dt;
                let (a, b) = s.alpha_beta(t).unwrap();
                let n = paths as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let std = var.sqrt();
                let se_mean = b / n.sqrt();
                let se_std = b / (2.0 * n).sqrt();
                assert!((mean - a * x0).abs() < 3.0 * se_mean, "t={t}: mean {mean} vs {}", a * x0);
                assert!((std - b).abs() < 3.0 * se_std, "t={t}: std {std} vs {b}");
                k += 1;
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vp_preserves_variance(lo in 0.0f64..1.0, span in 0.0f64..30.0, t in 0.0f64..=1.0) {
                let (a, b) = NoiseSchedule::vp(lo, lo + span).unwrap().alpha_beta(t).unwrap();
                prop_assert!((a * a + b * b - 1.0).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }

            #[test]
            fn noise_grows_with_time(lo in 0.01f64..1.0, span in 0.1f64..30.0, t in 0.0f64..0.99) {
                for s in [NoiseSchedule::vp(lo, lo + span).unwrap(), NoiseSchedule::ve(lo, lo + span).unwrap()] {
                    let (_, b0) = s.alpha_beta(t).unwrap();
                    let (_, b1) = s.alpha_beta(t + 0.01).unwrap();
                    prop_assert!(b1 > b0);
                }
            }
        }
    }
}
