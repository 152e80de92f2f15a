//! Binary checkpoint: magic, little-endian `u32` version, `u32` header length,
//! a JSON header (config, vocabulary, feature dimension, byte order, dtype),
//! then the parameters as little-endian `f32`.

use serde::{Deserialize, Serialize};

use super::{RnnError, RnnLm, RnnLmConfig};
use crate::vocab::Vocab;

const MAGIC: &[u8; 8] = b"CMDLMRNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: RnnLmConfig,
    vocab: Vocab,
    feat_dim: usize,
    num_params: usize,
    byte_order: String,
    dtype: String,
}

pub fn save_checkpoint(m: &RnnLm) -> Vec<u8> {
    let header = Header {
        config: m.config().clone(),
        vocab: m.vocab().clone(),
        feat_dim: m.feat_dim,
        num_params: m.num_params(),
        byte_order: "little-endian".into(),
        dtype: "f32".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * m.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in m.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

fn err(m: impl Into<String>) -> RnnError {
    RnnError::Checkpoint(m.into())
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, RnnError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| err("truncated header"))
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<RnnLm, RnnError> {
    if bytes.get(..8) != Some(MAGIC.as_slice()) {
        return Err(err("not a model checkpoint"));
    }
    let version = read_u32(bytes, 8)?;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let hlen = read_u32(bytes, 12)? as usize;
    let body = 16 + hlen;
    let header: Header = serde_json::from_slice(bytes.get(16..body).ok_or_else(|| err("truncated header"))?)
        .map_err(|e| err(format!("bad header: {e}")))?;
    if header.byte_order != "little-endian" || header.dtype != "f32" {
        return Err(err(format!(
            "unsupported encoding {} {}",
            header.byte_order, header.dtype
        )));
    }
    let data = &bytes[body..];
    if data.len() != 4 * header.num_params {
        return Err(err(format!(
            "expected {} parameter bytes, found {}",
            4 * header.num_params,
            data.len()
        )));
    }
    let params = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    RnnLm::from_parts(header.config, header.vocab, params, header.feat_dim)
}
