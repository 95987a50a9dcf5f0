//! The NTAR1 named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   5 bytes   magic "NTAR1"
//! offset 5   u32       header length H in bytes
//! offset 9   H bytes   UTF-8 header, newline-separated records
//! offset 9+H           payload: raw f32 values, little-endian
//! ```
//!
//! Header records, one per line, fields separated by single spaces:
//!
//! ```text
//! kind encoder-only|encoder-decoder
//! config num_layers=<n> hidden_size=<n> num_heads=<n> ffn_size=<n> vocab_size=<n> max_positions=<n>
//! tensor <name> <rank> <dim>... <byte offset into payload>
//! ```
//!
//! Tensors are listed in name order and packed back to back, so the first
//! offset is 0 and the payload length equals the sum of all tensor sizes.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;
use crate::transformer::{ModelConfig, ModelError, TensorMap};

pub const MAGIC: &[u8; 5] = b"NTAR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    EncoderOnly,
    EncoderDecoder,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::EncoderOnly => "encoder-only",
            ModelKind::EncoderDecoder => "encoder-decoder",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "encoder-only" => Some(ModelKind::EncoderOnly),
            "encoder-decoder" => Some(ModelKind::EncoderDecoder),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not an NTAR1 file (bad magic bytes)")]
    BadMagic,
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("tensor {name:?} needs payload bytes {start}..{end} but only {available} are present")]
    TruncatedTensor { name: String, start: usize, end: usize, available: usize },
    #[error("tensor {name:?} is stored at offset {found}, expected {expected}")]
    BadOffset { name: String, expected: usize, found: usize },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingData(usize),
    #[error("file holds an {found} model, expected {expected}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("checkpoint contains cross-attention tensor {0:?}")]
    CrossAttentionInCheckpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raw contents of an NTAR1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct NtarFile {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub tensors: TensorMap<f32>,
}

fn config_line(c: &ModelConfig) -> String {
    format!(
        "config num_layers={} hidden_size={} num_heads={} ffn_size={} vocab_size={} max_positions={}",
        c.num_layers, c.hidden_size, c.num_heads, c.ffn_size, c.vocab_size, c.max_positions
    )
}

impl NtarFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("kind {}\n{}\n", self.kind, config_line(&self.config));
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {name} {} {} {offset}\n", t.dims().len(), dims.join(" ")));
            offset += t.len() * 4;
        }
        let mut out = Vec::with_capacity(9 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let len_bytes: [u8; 4] = bytes
            .get(5..9)
            .ok_or_else(|| CheckpointError::CorruptHeader("missing header length".into()))?
            .try_into()
            .unwrap();
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let header_end = 9usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            CheckpointError::CorruptHeader(format!("header length {header_len} runs past end of file"))
        })?;
        let header = std::str::from_utf8(&bytes[9..header_end])
            .map_err(|e| CheckpointError::CorruptHeader(format!("header is not UTF-8: {e}")))?;
        let payload = &bytes[header_end..];

        let mut lines = header.lines();
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind "))
            .and_then(ModelKind::parse)
            .ok_or_else(|| CheckpointError::CorruptHeader("missing or unknown kind record".into()))?;
        let config = parse_config(lines.next().unwrap_or(""))?;

        let mut tensors = TensorMap::new();
        let mut expected_offset = 0usize;
        for (n, line) in lines.enumerate() {
            let bad = |why: &str| CheckpointError::CorruptHeader(format!("tensor record {}: {why}", n + 1));
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < 4 || fields[0] != "tensor" {
                return Err(bad("malformed"));
            }
            let name = fields[1].to_string();
            let rank: usize = fields[2].parse().map_err(|_| bad("bad rank"))?;
            if !(rank == 1 || rank == 2) || fields.len() != 4 + rank {
                return Err(bad("rank must be 1 or 2 with matching dims"));
            }
            let dims = fields[3..3 + rank]
                .iter()
                .map(|d| d.parse::<usize>().map_err(|_| bad("bad dim")))
                .collect::<Result<Vec<_>, _>>()?;
            let offset: usize = fields[3 + rank].parse().map_err(|_| bad("bad offset"))?;
            if offset != expected_offset {
                return Err(CheckpointError::BadOffset { name, expected: expected_offset, found: offset });
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("dims overflow"))?;
            let end = offset
                .checked_add(count.checked_mul(4).ok_or_else(|| bad("dims overflow"))?)
                .ok_or_else(|| bad("dims overflow"))?;
            if end > payload.len() {
                return Err(CheckpointError::TruncatedTensor {
                    name,
                    start: offset,
                    end,
                    available: payload.len(),
                });
            }
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Tensor::from_vec(dims, data)).is_some() {
                return Err(CheckpointError::CorruptHeader(format!("duplicate tensor {name:?}")));
            }
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(CheckpointError::TrailingData(payload.len() - expected_offset));
        }
        Ok(Self { kind, config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("ntar-partial");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn parse_config(line: &str) -> Result<ModelConfig, CheckpointError> {
    let bad = |why: String| CheckpointError::CorruptHeader(format!("config record: {why}"));
    let rest = line.strip_prefix("config ").ok_or_else(|| bad("missing".into()))?;
    let mut values = std::collections::HashMap::new();
    for field in rest.split(' ') {
        let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("field {field:?} is not key=value")))?;
        let v: usize = v.parse().map_err(|_| bad(format!("{k} is not an integer")))?;
        values.insert(k, v);
    }
    let get = |k: &str| values.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
    Ok(ModelConfig {
        num_layers: get("num_layers")?,
        hidden_size: get("hidden_size")?,
        num_heads: get("num_heads")?,
        ffn_size: get("ffn_size")?,
        vocab_size: get("vocab_size")?,
        max_positions: get("max_positions")?,
    })
}
