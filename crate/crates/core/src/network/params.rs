use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::molgraph::{ATOM_FEATURES, BOND_TYPES};
use crate::rng;

use super::{ModelConfig, NetworkError};

/// Named parameter tensors of the whole model, ordered by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

fn dense(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{prefix}.w"), vec![fan_in, fan_out]));
    out.push((format!("{prefix}.b"), vec![fan_out]));
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Encoder branch prefixes.
pub const CLEAN: &str = "encoder_clean";
pub const NOISY: &str = "encoder_noisy";

impl ModelParams {
    /// Every parameter name with its shape for a configuration.
    pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let l = cfg.hidden;
        let mut v = Vec::new();
        let branches: &[&str] = if cfg.share_encoders { &[CLEAN] } else { &[CLEAN, NOISY] };
        for b in branches {
            dense(&mut v, &format!("{b}.input"), ATOM_FEATURES, l);
            for r in 0..cfg.rounds {
                dense(&mut v, &format!("{b}.round{r}.filter"), cfg.rbf, l);
                dense(&mut v, &format!("{b}.round{r}.update0"), l + ATOM_FEATURES, l);
                dense(&mut v, &format!("{b}.round{r}.update1"), l, l);
            }
        }
        dense(&mut v, "fuse_mlp.0", cfg.time_dim + 2 * l, l);
        dense(&mut v, "fuse_mlp.1", l, l);
        let le = cfg.edge_hidden();
        dense(&mut v, "edge_mlp.0", cfg.time_dim + 2 * BOND_TYPES, le);
        dense(&mut v, "edge_mlp.1", le, 1);
        for k in 0..cfg.gcn_layers {
            dense(&mut v, &format!("gcn.{k}"), l, l);
        }
        dense(&mut v, "head_3d_mlp.0", l, l);
        dense(&mut v, "head_3d_mlp.1", l, 3);
        let dh = cfg.head_dim();
        for k in 0..cfg.heads {
            v.push((format!("head_2d_attention.q{k}"), vec![l, dh]));
            v.push((format!("head_2d_attention.k{k}"), vec![l, dh]));
        }
        dense(&mut v, "head_2d_mlp.0", cfg.heads + 2 * BOND_TYPES + cfg.time_dim, le);
        dense(&mut v, "head_2d_mlp.1", le, BOND_TYPES);
        dense(&mut v, "head_h_mlp.0", l, l);
        dense(&mut v, "head_h_mlp.1", l, ATOM_FEATURES);
        dense(&mut v, "projection_head.0", l, l);
        dense(&mut v, "projection_head.1", l, cfg.proj_dim);
        v
    }

    /// Glorot-normal weights from a per-name seeded stream; zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let tensors = Self::layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let t = if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let mut r = rng::stream(seed, &[name_hash(&name)]);
                    let data = rng::normals(&mut r, shape[0] * shape[1]).into_iter().map(|z| z * std).collect();
                    Tensor::new(shape, data).expect("layout shapes")
                };
                (name, t)
            })
            .collect();
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    /// Checks names and shapes against a configuration's layout.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<(), NetworkError> {
        let layout = Self::layout(cfg);
        for (name, shape) in &layout {
            match self.tensors.get(name) {
                None => return Err(NetworkError::MissingParam(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(NetworkError::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !layout.iter().any(|(n, _)| n == *k)) {
            return Err(NetworkError::UnexpectedParam(extra.clone()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect() }
    }

    /// Puts every tensor on `tape`, as leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> ParamVars<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        ParamVars { tape, vars }
    }
}

/// Parameters bound to one tape.
pub struct ParamVars<'t> {
    tape: &'t Tape,
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>, NetworkError> {
        self.vars.get(name).copied().ok_or_else(|| NetworkError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}
