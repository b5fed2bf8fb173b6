//! Binary checkpoint container.
//!
//! Layout: the ASCII line `qt-ckpt-v1\n`, a little-endian `u64` header length,
//! a JSON header, then a payload of little-endian floats. The header indexes
//! every tensor by name, shape, element type and byte offset, and records a
//! SHA-256 digest of the payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autograd::{ParamStore, Tensor};
use crate::corpus::{TextEncoder, Tokenizer};
use crate::quantizer::Codebook;

use super::{ModelConfig, Network, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "qt-ckpt-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a {CHECKPOINT_FORMAT} checkpoint")]
    Format,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tokenizer mismatch: checkpoint expects {expected}, found {found}")]
    TokenizerMismatch { expected: String, found: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    config: ModelConfig,
    tokenizer: String,
    tokenizer_hash: String,
    step: u64,
    codebook_ready: bool,
    code_head_usage: Vec<u64>,
    tensors: Vec<Entry>,
    payload_sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

struct PayloadWriter {
    bytes: Vec<u8>,
    entries: Vec<Entry>,
}

impl PayloadWriter {
    fn f32s(&mut self, name: &str, shape: Vec<usize>, data: &[f32]) {
        let offset = self.bytes.len();
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(Entry {
            name: name.into(),
            shape,
            dtype: "f32".into(),
            offset,
            len: data.len(),
        });
    }

    fn f64s(&mut self, name: &str, shape: Vec<usize>, data: &[f64]) {
        let offset = self.bytes.len();
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(Entry {
            name: name.into(),
            shape,
            dtype: "f64".into(),
            offset,
            len: data.len(),
        });
    }
}

/// Serializes the model to bytes. Identical models give identical bytes.
pub fn checkpoint_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut w = PayloadWriter {
        bytes: Vec::new(),
        entries: Vec::new(),
    };
    for (_, name, t) in model.params.iter() {
        w.f32s(name, vec![t.rows(), t.cols()], t.data());
    }
    let cb = &model.codebook;
    let (k, d) = (cb.size(), cb.dim());
    w.f32s("codebook.embeddings", vec![k, d], cb.embeddings());
    w.f64s("codebook.ema_counts", vec![k], cb.ema_counts());
    w.f64s("codebook.ema_sums", vec![k, d], cb.ema_sums());
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config.clone(),
        tokenizer: model.tokenizer.to_json(),
        tokenizer_hash: model.tokenizer.fingerprint(),
        step: model.step,
        codebook_ready: model.codebook_ready,
        code_head_usage: model.code_head_usage.clone(),
        tensors: w.entries,
        payload_sha256: hex::encode(Sha256::digest(&w.bytes)),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(CHECKPOINT_FORMAT.len() + 9 + json.len() + w.bytes.len());
    out.extend_from_slice(CHECKPOINT_FORMAT.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.bytes);
    out
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&checkpoint_bytes(model)).map_err(io)?;
    f.sync_all().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TrainedModel, CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    let magic = CHECKPOINT_FORMAT.len() + 1;
    if bytes.len() < magic || &bytes[..magic - 1] != CHECKPOINT_FORMAT.as_bytes() || bytes[magic - 1] != b'\n' {
        return Err(CheckpointError::Format);
    }
    let len_bytes: [u8; 8] = bytes
        .get(magic..magic + 8)
        .ok_or_else(|| corrupt("truncated header length"))?
        .try_into()
        .expect("eight bytes");
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| corrupt("header too large"))?;
    let start = magic + 8;
    let header_end = start.checked_add(header_len).ok_or_else(|| corrupt("header too large"))?;
    let header_bytes = bytes.get(start..header_end).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format);
    }
    let payload = &bytes[header_end..];
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload digest mismatch"));
    }
    let tokenizer = Tokenizer::from_json(&header.tokenizer).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if tokenizer.fingerprint() != header.tokenizer_hash {
        return Err(CheckpointError::TokenizerMismatch {
            expected: header.tokenizer_hash,
            found: tokenizer.fingerprint(),
        });
    }
    let config = header.config;
    config.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut params = ParamStore::<f32>::new();
    let mut codebook_parts: (Option<Vec<f32>>, Option<Vec<f64>>, Option<Vec<f64>>) = (None, None, None);
    for e in &header.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(CheckpointError::Corrupt(format!("unknown dtype {other}"))),
        };
        if e.shape.iter().product::<usize>() != e.len {
            return Err(CheckpointError::Corrupt(format!("tensor {} shape disagrees with length", e.name)));
        }
        let raw = e
            .offset
            .checked_add(e.len * width)
            .and_then(|end| payload.get(e.offset..end))
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {} out of bounds", e.name)))?;
        match (e.name.as_str(), width) {
            ("codebook.embeddings", 4) => codebook_parts.0 = Some(read_f32(raw)),
            ("codebook.ema_counts", 8) => codebook_parts.1 = Some(read_f64(raw)),
            ("codebook.ema_sums", 8) => codebook_parts.2 = Some(read_f64(raw)),
            (name, 4) if e.shape.len() == 2 => {
                if params.id(name).is_some() {
                    return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
                }
                params.add(name, Tensor::from_vec(e.shape[0], e.shape[1], read_f32(raw)));
            }
            (name, _) => return Err(CheckpointError::Corrupt(format!("unexpected tensor {name}"))),
        }
    }
    let network = Network::resolve(&config, &params).map_err(CheckpointError::Corrupt)?;
    let (Some(emb), Some(counts), Some(sums)) = codebook_parts else {
        return Err(corrupt("missing codebook tensors"));
    };
    let (k, d) = (config.codebook_size, config.dim);
    if emb.len() != k * d || counts.len() != k || sums.len() != k * d {
        return Err(corrupt("codebook shape disagrees with config"));
    }
    if header.code_head_usage.len() != k * config.sentence_heads {
        return Err(corrupt("code usage table has the wrong size"));
    }
    let codebook = Codebook::from_state(k, d, emb, counts, sums, config.ema_decay, config.ema_epsilon);
    Ok(TrainedModel {
        config,
        tokenizer,
        params,
        network,
        codebook,
        codebook_ready: header.codebook_ready,
        step: header.step,
        code_head_usage: header.code_head_usage,
    })
}

fn read_f32(raw: &[u8]) -> Vec<f32> {
    raw.chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect()
}

fn read_f64(raw: &[u8]) -> Vec<f64> {
    raw.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect()
}
