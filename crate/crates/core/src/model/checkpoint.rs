//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MSNETCKP"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes of UTF-8 JSON (config, config hash, vocabularies,
//!          dataset hash, optimizer step and settings, block table)
//! blocks   for each block in header order: `len` f64 values, then `len`
//!          f64 Adagrad accumulators
//! digest   32 bytes SHA-256 of everything above
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::features::Vocabularies;
use crate::tensor::Tensor;

use super::{Adagrad, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    config_hash: String,
    vocabs: Vocabularies,
    dataset_hash: Option<String>,
    step: u64,
    learning_rate: f64,
    decay: f64,
    blocks: Vec<BlockHeader>,
}

/// Everything needed to resume training or evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Adagrad,
    /// Hash of the training data the model was fitted on.
    pub dataset_hash: Option<String>,
}

fn encode(model: &Model, optimizer: &Adagrad, dataset_hash: Option<&str>) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        config_hash: model.config.config_hash(),
        vocabs: model.vocabs.clone(),
        dataset_hash: dataset_hash.map(str::to_string),
        step: optimizer.step,
        learning_rate: optimizer.learning_rate,
        decay: optimizer.decay,
        blocks: model
            .params
            .iter()
            .map(|p| BlockHeader {
                name: p.name.clone(),
                kind: p.kind,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 16 * model.params.total_entries() + 64);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params.iter() {
        let acc = optimizer
            .accumulators
            .get(&p.name)
            .ok_or_else(|| Error::UnknownParameter(p.name.clone()))?;
        for v in p.value.values().iter().chain(acc) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Writes a checkpoint atomically: the previous file at `path` stays intact
/// until the new one is complete.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, optimizer: &Adagrad, dataset_hash: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model, optimizer, dataset_hash)?;
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp_name);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Decodes and verifies a checkpoint. With `expected` set, the stored
/// configuration must hash identically.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let reject = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 + 4 + 8 + 32 {
        return Err(reject("file truncated"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(reject("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(reject("integrity check failed (truncated or corrupted)"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| reject("header length out of range"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.config.config_hash() != header.config_hash {
        return Err(reject("stored configuration does not match its hash"));
    }
    if let Some(cfg) = expected {
        let want = cfg.config_hash();
        if want != header.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, expected {want}",
                header.config_hash
            )));
        }
    }

    let mut cursor = header_end;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let end = cursor
            .checked_add(n * 8)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| reject("parameter data truncated"))?;
        let out = body[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        cursor = end;
        Ok(out)
    };
    let mut params = ParamStore::new();
    let mut optimizer = Adagrad {
        learning_rate: header.learning_rate,
        decay: header.decay,
        step: header.step,
        accumulators: Default::default(),
    };
    for b in &header.blocks {
        let n: usize = b.shape.iter().product();
        let values = take(n)?;
        let acc = take(n)?;
        params.insert(b.name.clone(), b.kind, Tensor::new(b.shape.clone(), values)?)?;
        optimizer.accumulators.insert(b.name.clone(), acc);
    }
    if cursor != body.len() {
        return Err(reject("trailing bytes after parameter data"));
    }
    let model = Model {
        config: header.config,
        vocabs: header.vocabs,
        params,
    };
    let reference = Model::new(model.config.clone(), model.vocabs.clone())?;
    let layout = |m: &Model| m.params.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
    if layout(&reference) != layout(&model) {
        return Err(reject("parameter blocks do not match the stored configuration"));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        dataset_hash: header.dataset_hash,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}
