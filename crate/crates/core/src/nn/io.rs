//! Weights file layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes   "VOCEMONN"
//! version     u32
//! total_len   u64       whole file, checksum included
//! header_len  u32
//! header      JSON      architecture, tensor shapes, metadata
//! weights     f32...    kernel then bias of each trainable layer
//! crc32       u32       over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::layers::LayerSpec;
use super::model::{assemble, Model, Params};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"VOCEMONN";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error on model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("model file checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed model header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_length: usize,
    layers: Vec<LayerSpec>,
    /// `[rows, cols]` of each trainable layer's kernel, `None` for the rest.
    kernels: Vec<Option<[usize; 2]>>,
    #[serde(default)]
    metadata: Map<String, Value>,
}

pub fn encode_model(model: &Model<f32>) -> Vec<u8> {
    let header = Header {
        input_length: model.input_length(),
        layers: model.layers().to_vec(),
        kernels: model.params().iter().map(|p| p.as_ref().map(|p| [p.kernel.nrows(), p.kernel.ncols()])).collect(),
        metadata: model.metadata.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let total = PREAMBLE + header.len() + 4 * model.param_count() + 4;
    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(total as u64).to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for p in model.params().iter().flatten() {
        for v in p.kernel.iter().chain(p.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(buf.len(), total);
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>, ModelIoError> {
    let found = bytes.len() as u64;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(if bytes.len() < 8 && MAGIC.starts_with(bytes) {
            ModelIoError::Truncated { expected: PREAMBLE as u64, found }
        } else {
            ModelIoError::BadMagic
        });
    }
    if bytes.len() < PREAMBLE + 4 {
        return Err(ModelIoError::Truncated { expected: (PREAMBLE + 4) as u64, found });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelIoError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let total = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if found < total {
        return Err(ModelIoError::Truncated { expected: total, found });
    }
    if found > total {
        return Err(ModelIoError::Header(format!("{} trailing bytes after model", found - total)));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ModelIoError::ChecksumMismatch { stored, computed });
    }

    let header_len = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| ModelIoError::Header("header length exceeds file".into()))?;
    let header: Header =
        serde_json::from_slice(&body[PREAMBLE..header_end]).map_err(|e| ModelIoError::Header(e.to_string()))?;
    if header.kernels.len() != header.layers.len() {
        return Err(ModelIoError::Header("tensor list does not match layer list".into()));
    }

    let mut floats = body[header_end..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let expected_floats: usize = header.kernels.iter().flatten().map(|[r, c]| r * c + c).sum();
    if body.len() - header_end != 4 * expected_floats {
        return Err(ModelIoError::Header(format!(
            "weight section holds {} bytes, header describes {}",
            body.len() - header_end,
            4 * expected_floats
        )));
    }
    let params = header
        .kernels
        .iter()
        .map(|k| {
            k.map(|[r, c]| Params {
                kernel: Array2::from_shape_vec((r, c), floats.by_ref().take(r * c).collect()).expect("sized"),
                bias: Array1::from_iter(floats.by_ref().take(c)),
            })
        })
        .collect();
    Ok(assemble(header.input_length, header.layers, params, header.metadata)?)
}

/// Writes atomically: the file is staged next to `path` and renamed into place.
pub fn save_model(model: &Model<f32>, path: &Path) -> Result<(), ModelIoError> {
    let bytes = encode_model(model);
    let mut staging = path.as_os_str().to_owned();
    staging.push(".partial");
    fs::write(&staging, &bytes)?;
    fs::rename(&staging, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>, ModelIoError> {
    decode_model(&fs::read(path)?)
}
