//! Checkpoint directories.
//!
//! `checkpoint.toml` lists every tensor (name, shape, byte offset, role) and
//! the training metadata; `tensors.bin` holds the raw little-endian f32
//! payload in manifest order. Adagrad accumulators are stored next to their
//! parameters so training can resume.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "checkpoint.toml";
pub const PAYLOAD_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    Accumulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub role: TensorRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// `skel` or `attr`.
    pub kind: String,
    pub step: u64,
    pub epoch: u64,
    pub learning_rate: f64,
    pub lr_halved: bool,
    pub best_val_loss: Option<f64>,
    /// Vocabulary name → SHA-256 of its token list.
    pub vocab_hashes: BTreeMap<String, String>,
    pub config: toml::Table,
    #[serde(default, rename = "tensor")]
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn new(kind: &str, config: toml::Table) -> Self {
        CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            kind: kind.to_owned(),
            step: 0,
            epoch: 0,
            learning_rate: 0.0,
            lr_halved: false,
            best_val_loss: None,
            vocab_hashes: BTreeMap::new(),
            config,
            tensors: Vec::new(),
        }
    }

    pub fn expect_vocab(&self, name: &str, hash: &str) -> Result<()> {
        match self.vocab_hashes.get(name) {
            Some(h) if h == hash => Ok(()),
            Some(h) => Err(Error::data(format!(
                "{} checkpoint was trained with {name} vocabulary {h}, got {hash}",
                self.kind
            ))),
            None => Err(Error::data(format!(
                "{} checkpoint records no {name} vocabulary hash",
                self.kind
            ))),
        }
    }
}

pub fn save_checkpoint(dir: &Path, header: &CheckpointManifest, store: &ParameterStore<f32>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = header.clone();
    manifest.format_version = CHECKPOINT_VERSION;
    manifest.tensors.clear();
    let mut payload: Vec<u8> = Vec::with_capacity(store.parameter_count() * 8);
    for id in store.ids() {
        let t = store.get(id);
        for (role, values) in [(TensorRole::Param, t.data()), (TensorRole::Accumulator, store.accumulator(id))] {
            manifest.tensors.push(TensorEntry {
                name: store.name(id).to_owned(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
                role,
            });
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let path = dir.join(PAYLOAD_FILE);
    std::fs::write(&path, payload).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, ParameterStore<f32>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest =
        toml::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported checkpoint version {}", manifest.format_version),
        ));
    }
    let ppath = dir.join(PAYLOAD_FILE);
    let payload = std::fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut store = ParameterStore::new();
    let mut expected_end = 0u64;
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(Error::format(&ppath, format!("tensor {} runs past end of payload", entry.name)));
        }
        expected_end = expected_end.max(end as u64);
        let values: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint tensor {}", entry.name)));
        }
        match entry.role {
            TensorRole::Param => {
                store.add(&entry.name, Tensor::new(entry.shape.clone(), values)?)?;
            }
            TensorRole::Accumulator => {
                let id = store.id(&entry.name).ok_or_else(|| {
                    Error::format(&mpath, format!("accumulator for unknown tensor {}", entry.name))
                })?;
                store.set_accumulator(id, values)?;
            }
        }
    }
    if expected_end != payload.len() as u64 {
        return Err(Error::format(&ppath, "payload size does not match manifest"));
    }
    Ok((manifest, store))
}
