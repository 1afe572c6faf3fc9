//! Versioned binary checkpoints.
//!
//! Layout: `KETODCKP`, format version (u32 LE), header length (u64 LE), JSON
//! header, tensor values in layout order (little-endian), then the SHA-256 of
//! everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::params::{Layout, Params};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"KETODCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: Params<T>,
    pub vocab_hash: String,
    pub step: usize,
    pub validation_bleu: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    step: usize,
    validation_bleu: f64,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let header = Header {
        config: ckpt.params.config.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
        step: ckpt.step,
        validation_bleu: ckpt.validation_bleu,
        dtype: T::DTYPE.to_string(),
        tensors: ckpt
            .params
            .layout
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(32 + header.len() + ckpt.params.data.len() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for &x in &ckpt.params.data {
        x.write_le(&mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes through a temporary file so a crash never leaves a partial checkpoint.
pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| ModelError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ModelError::io(path, e))
}

/// Parses a checkpoint, verifying its digest, version, dtype and (when given)
/// the vocabulary hash.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path, vocab_hash: Option<&str>) -> Result<Checkpoint<T>> {
    let corrupt = |detail: &str| ModelError::Corrupt {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 20 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("digest mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])?;
    if header.dtype != T::DTYPE {
        return Err(ModelError::Dtype {
            found: header.dtype,
            expected: T::DTYPE.to_string(),
        });
    }
    if let Some(expected) = vocab_hash {
        if header.vocab_hash != expected {
            return Err(ModelError::VocabMismatch {
                checkpoint: header.vocab_hash,
                supplied: expected.to_string(),
            });
        }
    }
    header.config.validate()?;
    let layout = Layout::new(&header.config);
    let same_tensors = layout.tensors.len() == header.tensors.len()
        && layout
            .tensors
            .iter()
            .zip(&header.tensors)
            .all(|(a, b)| a.name == b.name && a.shape == b.shape);
    if !same_tensors {
        return Err(corrupt("tensor table does not match the configuration"));
    }
    let values = &body[header_end..];
    if values.len() != layout.num_params() * T::BYTES {
        return Err(corrupt("tensor data length"));
    }
    let data = values.chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok(Checkpoint {
        params: Params {
            config: header.config,
            layout,
            data,
        },
        vocab_hash: header.vocab_hash,
        step: header.step,
        validation_bleu: header.validation_bleu,
    })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, vocab_hash: Option<&str>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
    decode_checkpoint(&bytes, path, vocab_hash)
}
