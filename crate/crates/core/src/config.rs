//! Run configuration: a flat `section.key = value` text format layered over
//! typed defaults.
//!
//! ```
//! use mjae_core::Config;
//! let cfg = Config::parse("loss.lambda2 = 0\ntraining.seed = 7\n").unwrap();
//! assert_eq!(cfg.loss.lambda2, 0.0);
//! assert_eq!(cfg.training.seed, 7);
//! ```

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::frames::DEFAULT_CUTOFF;
use crate::loss::LossConfig;
use crate::network::ModelConfig;
use crate::sampling::SamplerConfig;
use crate::schedule::NoiseSchedule;
use crate::training::TrainConfig;
use crate::trajectory::{TrajectoryMode, DEFAULT_T_MIN};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {detail}")]
    BadValue { key: String, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Vp,
    Ve,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Vp, beta_min: 0.1, beta_max: 10.0, sigma_min: 0.01, sigma_max: 1.0 }
    }
}

impl ScheduleConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule, ConfigError> {
        let s = match self.kind {
            ScheduleKind::Vp => NoiseSchedule::vp(self.beta_min, self.beta_max),
            ScheduleKind::Ve => NoiseSchedule::ve(self.sigma_min, self.sigma_max),
        };
        s.map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub mode: TrajectoryMode,
    pub t_min: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { mode: TrajectoryMode::Continuous, t_min: DEFAULT_T_MIN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesConfig {
    pub cutoff: f64,
}

impl Default for FramesConfig {
    fn default() -> Self {
        Self { cutoff: DEFAULT_CUTOFF }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schedule: ScheduleConfig,
    pub trajectory: TrajectoryConfig,
    pub frames: FramesConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
    pub sampling: SamplerConfig,
}

impl Config {
    /// Defaults overridden by the lines of `text`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.to_string() })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Overrides one dotted key, keeping the existing value's type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut root = serde_json::to_value(&*self).expect("config serialises");
        let (section, field) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let slot = root
            .get_mut(section)
            .and_then(|s| s.get_mut(field))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let bad = |detail: String| ConfigError::BadValue { key: key.to_string(), detail };
        *slot = match slot {
            Value::Bool(_) => Value::Bool(value.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?),
            Value::Number(n) if n.is_u64() || n.is_i64() => {
                Value::from(value.parse::<u64>().map_err(|e| bad(e.to_string()))?)
            }
            Value::Number(_) => {
                let x: f64 = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
                serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("non-finite".into()))?
            }
            _ => Value::String(value.to_string()),
        };
        *self = serde_json::from_value(root).map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    /// All keys with their current values, sorted.
    pub fn entries(&self) -> Vec<(String, String)> {
        let root = serde_json::to_value(self).expect("config serialises");
        let mut out = Vec::new();
        if let Value::Object(sections) = root {
            for (s, fields) in sections {
                if let Value::Object(fields) = fields {
                    flatten(&s, &fields, &mut out);
                }
            }
        }
        out.sort();
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.schedule.schedule()?;
        if !(self.trajectory.t_min > 0.0 && self.trajectory.t_min < 1.0) {
            return Err(ConfigError::Invalid(format!("trajectory.t_min = {} outside (0, 1)", self.trajectory.t_min)));
        }
        if !(self.frames.cutoff > 0.0) {
            return Err(ConfigError::Invalid("frames.cutoff must be positive".into()));
        }
        self.loss.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.training.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sampling.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

fn flatten(section: &str, fields: &Map<String, Value>, out: &mut Vec<(String, String)>) {
    for (k, v) in fields {
        let text = match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        out.push((format!("{section}.{k}"), text));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_and_errors() {
        let mut cfg = Config::parse("schedule.kind = ve\nloss.weighting = uniform # comment\n").unwrap();
        assert_eq!(cfg.schedule.kind, ScheduleKind::Ve);
        cfg.set("trajectory.mode", "cold3d").unwrap();
        assert_eq!(cfg.trajectory.mode, TrajectoryMode::Cold3d);
        assert!(matches!(cfg.set("loss.nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("training.epochs", "x"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("junk"), Err(ConfigError::Syntax { line: 1, .. })));
        cfg.set("training.lr", "0.0005").unwrap();
        assert_eq!(cfg.training.lr, 5e-4);
    }

    #[test]
    fn float_keys_accept_integers() {
        let cfg = Config::parse("loss.lambda2 = 1").unwrap();
        assert_eq!(cfg.loss.lambda2, 1.0);
    }
}
