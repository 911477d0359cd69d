//! Binary checkpoint: `MJAECKPT`, u32 LE version, u32 LE header length,
//! JSON header, then little-endian f64 buffers at the offsets the header lists.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::network::{ModelConfig, ModelParams, ScoreNetwork};
use crate::schedule::ComponentSchedules;

use super::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MJAECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("tensor {name:?}: checkpoint has shape {found:?}, configuration expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0:?} missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint tensor {0:?} is not part of the configured model")]
    UnexpectedTensor(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    schedules: ComponentSchedules,
    frame_cutoff: f64,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Network plus optional optimiser state read back from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: ScoreNetwork,
    pub adam: Option<AdamState>,
}

/// Serialises to bytes.
pub fn write_checkpoint(net: &ScoreNetwork, adam: Option<&AdamState>) -> Vec<u8> {
    let mut named: Vec<(String, &Tensor)> = net.params.iter().map(|(k, t)| (k.clone(), t)).collect();
    if let Some(a) = adam {
        named.extend(a.m.iter().map(|(k, t)| (format!("{MOMENT1}{k}"), t)));
        named.extend(a.v.iter().map(|(k, t)| (format!("{MOMENT2}{k}"), t)));
    }
    let mut offset = 0;
    let tensors = named
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), dtype: "f64".into(), offset, len: t.numel() };
            offset += t.numel() * 8;
            e
        })
        .collect();
    let header = Header {
        model: net.config,
        schedules: net.schedules,
        frame_cutoff: net.frame_cutoff,
        adam_step: adam.map(|a| a.step),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes via a temporary file in the same directory, then renames.
pub fn save_checkpoint(path: &Path, net: &ScoreNetwork, adam: Option<&AdamState>) -> Result<(), CheckpointError> {
    let bytes = write_checkpoint(net, adam);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn need(bytes: &[u8], end: usize) -> Result<(), CheckpointError> {
    if bytes.len() < end {
        return Err(CheckpointError::Truncated { needed: end, available: bytes.len() });
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses bytes produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint, CheckpointError> {
    need(bytes, 8)?;
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    need(bytes, 16)?;
    let version = u32_at(bytes, 8);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let hlen = u32_at(bytes, 12) as usize;
    need(bytes, 16 + hlen)?;
    let header: Header =
        serde_json::from_slice(&bytes[16..16 + hlen]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let body = &bytes[16 + hlen..];
    let mut params = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for e in &header.tensors {
        if e.dtype != "f64" {
            return Err(CheckpointError::Header(format!("tensor {:?} has dtype {}", e.name, e.dtype)));
        }
        if e.shape.iter().product::<usize>() != e.len {
            return Err(CheckpointError::Header(format!("tensor {:?}: shape and length disagree", e.name)));
        }
        let end = e.offset + e.len * 8;
        if body.len() < end {
            return Err(CheckpointError::Truncated { needed: 16 + hlen + end, available: bytes.len() });
        }
        let data = body[e.offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| CheckpointError::Header(err.to_string()))?;
        if let Some(k) = e.name.strip_prefix(MOMENT1) {
            m.insert(k.to_string(), t);
        } else if let Some(k) = e.name.strip_prefix(MOMENT2) {
            v.insert(k.to_string(), t);
        } else {
            params.insert(e.name.clone(), t);
        }
    }
    let model = expected.copied().unwrap_or(header.model);
    for (name, shape) in ModelParams::layout(&model) {
        match params.get(&name) {
            None => return Err(CheckpointError::MissingTensor(name)),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(CheckpointError::ShapeMismatch { name, expected: shape, found: t.shape().to_vec() })
            }
            _ => {}
        }
    }
    let params = ModelParams::from_map(params);
    let mut network = ScoreNetwork::with_params(model, params, header.schedules).map_err(|e| match e {
        crate::network::NetworkError::UnexpectedParam(n) => CheckpointError::UnexpectedTensor(n),
        other => CheckpointError::Header(other.to_string()),
    })?;
    network.frame_cutoff = header.frame_cutoff;
    let adam = match header.adam_step {
        Some(step) => Some(AdamState { step, m: ModelParams::from_map(m), v: ModelParams::from_map(v) }),
        None => None,
    };
    Ok(Checkpoint { network, adam })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&std::fs::read(path)?, None)
}

/// Loads and checks every tensor against the layout of `model`.
pub fn load_checkpoint_for(path: &Path, model: &ModelConfig) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&std::fs::read(path)?, Some(model))
}
