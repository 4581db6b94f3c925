//! Training state on disk.
//!
//! ```text
//! "TYCK" | version u32 LE | SHA-256(payload) | payload
//! payload = manifest length u32 LE | manifest JSON | f64 LE blocks
//! ```
//!
//! Blocks are the model parameters followed by the optimizer's first and
//! second moments, in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{BlockInfo, ModelSpec};
use super::optim::{OptimState, SchedulerSpec};
use super::{EpochRecord, Result, TrainerError};
use crate::rng::RngState;

pub const MAGIC: &[u8; 4] = b"TYCK";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub epoch: usize,
    /// Larger is better.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Completed training epochs.
    pub epoch: usize,
    pub model: ModelSpec,
    pub params: Vec<Vec<f64>>,
    pub optimizer_kind: String,
    pub optimizer: OptimState,
    pub scheduler: SchedulerSpec,
    pub rng: RngState,
    pub best: Option<Best>,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    epoch: usize,
    model: ModelSpec,
    blocks: Vec<BlockInfo>,
    optimizer: OptimManifest,
    scheduler: SchedulerSpec,
    rng: RngState,
    best: Option<Best>,
    history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct OptimManifest {
    kind: String,
    step: u64,
    m: Vec<usize>,
    v: Vec<usize>,
}

fn corrupt(reason: impl Into<String>) -> TrainerError {
    TrainerError::CorruptCheckpoint(reason.into())
}

pub fn encode(ckpt: &Checkpoint, blocks: Vec<BlockInfo>) -> Vec<u8> {
    let manifest = Manifest {
        epoch: ckpt.epoch,
        model: ckpt.model.clone(),
        blocks,
        optimizer: OptimManifest {
            kind: ckpt.optimizer_kind.clone(),
            step: ckpt.optimizer.step,
            m: ckpt.optimizer.m.iter().map(Vec::len).collect(),
            v: ckpt.optimizer.v.iter().map(Vec::len).collect(),
        },
        scheduler: ckpt.scheduler.clone(),
        rng: ckpt.rng.clone(),
        best: ckpt.best,
        history: ckpt.history.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut payload = Vec::new();
    payload.extend_from_slice(&(json.len() as u32).to_le_bytes());
    payload.extend_from_slice(&json);
    for block in ckpt.params.iter().chain(&ckpt.optimizer.m).chain(&ckpt.optimizer.v) {
        for v in block {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(Sha256::digest(&payload).as_slice());
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(corrupt("missing TYCK header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TrainerError::VersionMismatch {
            found: version,
            supported: VERSION,
        });
    }
    let payload = &bytes[HEADER..];
    if Sha256::digest(payload).as_slice() != &bytes[8..40] {
        return Err(corrupt("payload digest mismatch"));
    }
    if payload.len() < 4 {
        return Err(corrupt("payload too short"));
    }
    let len = u32::from_le_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
    let json = payload.get(4..4 + len).ok_or_else(|| corrupt("manifest truncated"))?;
    let m: Manifest = serde_json::from_slice(json).map_err(|e| corrupt(format!("manifest: {e}")))?;

    let mut values = payload[4 + len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = m.blocks.iter().map(|b| b.shape.iter().product::<usize>()).sum::<usize>()
        + m.optimizer.m.iter().sum::<usize>()
        + m.optimizer.v.iter().sum::<usize>();
    if payload.len() - 4 - len != 8 * expected {
        return Err(corrupt("block data length disagrees with manifest"));
    }
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let params = m.blocks.iter().map(|b| take(b.shape.iter().product())).collect();
    let first = m.optimizer.m.iter().map(|&n| take(n)).collect();
    let second = m.optimizer.v.iter().map(|&n| take(n)).collect();
    Ok(Checkpoint {
        epoch: m.epoch,
        model: m.model,
        params,
        optimizer_kind: m.optimizer.kind,
        optimizer: OptimState {
            step: m.optimizer.step,
            m: first,
            v: second,
        },
        scheduler: m.scheduler,
        rng: m.rng,
        best: m.best,
        history: m.history,
    })
}

fn io(path: &Path, source: std::io::Error) -> TrainerError {
    TrainerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via a sibling temporary file and rename.
pub fn save(ckpt: &Checkpoint, blocks: Vec<BlockInfo>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, encode(ckpt, blocks)).map_err(|e| io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    decode(&bytes)
}
