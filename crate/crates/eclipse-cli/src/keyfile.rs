//! Key file format: the owner's extraction material plus signature message,
//! in the same container conventions as models (magic `ECLKEY01`, u64-LE
//! length-prefixed JSON manifest, f64-LE blob, trailing CRC32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use eclipse_core::linalg::Mat;
use eclipse_core::tensor::Tensor;
use eclipse_core::watermark::{SchemeKind, SecretKey, SignatureMessage};

use crate::container::ContainerError;

pub const MAGIC: &[u8; 8] = b"ECLKEY01";

type Result<T> = std::result::Result<T, ContainerError>;

fn format_err<T>(offset: usize, reason: impl Into<String>) -> Result<T> {
    Err(ContainerError::Format {
        offset,
        reason: reason.into(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyManifest {
    scheme: SchemeKind,
    layer_index: usize,
    bits: usize,
    delta: f64,
    expected_dim: usize,
    message: Vec<u8>,
    projection: Option<BlobRef2>,
    positions: Option<Vec<usize>>,
    probes: Option<Vec<ProbeRef>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef2 {
    rows: usize,
    cols: usize,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbeRef {
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

fn push_values(blob: &mut Vec<u8>, values: &[f64]) -> (u64, u64) {
    let offset = blob.len() as u64;
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    (offset, (values.len() * 8) as u64)
}

fn take_values(blob: &[u8], blob_start: usize, offset: u64, len: u64) -> Result<Vec<f64>> {
    let (offset, len) = (offset as usize, len as usize);
    if len % 8 != 0 || offset + len > blob.len() {
        return format_err(
            blob_start + offset,
            format!("blob slice [{offset}, {}) is invalid", offset + len),
        );
    }
    Ok(blob[offset..offset + len]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn key_to_bytes(key: &SecretKey, message: &SignatureMessage) -> Vec<u8> {
    let mut blob = Vec::new();
    let projection = key.projection.as_ref().map(|m| {
        let (offset, len) = push_values(&mut blob, m.data());
        BlobRef2 {
            rows: m.rows(),
            cols: m.cols(),
            offset,
            len,
        }
    });
    let probes = key.probes.as_ref().map(|probes| {
        probes
            .iter()
            .map(|t| {
                let (offset, len) = push_values(&mut blob, t.data());
                ProbeRef {
                    shape: t.shape().to_vec(),
                    offset,
                    len,
                }
            })
            .collect()
    });
    let manifest = KeyManifest {
        scheme: key.scheme,
        layer_index: key.layer_index,
        bits: message.len(),
        delta: key.delta,
        expected_dim: key.expected_dim,
        message: message.bits().to_vec(),
        projection,
        positions: key.positions.clone(),
        probes,
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("key manifest serializes");

    let mut bytes = Vec::with_capacity(16 + manifest_json.len() + blob.len() + 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    bytes.extend_from_slice(&blob);
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

pub fn key_from_bytes(bytes: &[u8]) -> Result<(SecretKey, SignatureMessage)> {
    if bytes.len() < 20 {
        return format_err(bytes.len(), "file truncated before header completes");
    }
    if &bytes[..8] != MAGIC {
        return format_err(0, "bad magic, expected ECLKEY01");
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let checksum_start = bytes.len() - 4;
    if 16 + manifest_len > checksum_start {
        return format_err(8, format!("manifest length {manifest_len} exceeds file"));
    }
    let stored = u32::from_le_bytes(bytes[checksum_start..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..checksum_start]);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }
    let manifest: KeyManifest = match serde_json::from_slice(&bytes[16..16 + manifest_len]) {
        Ok(m) => m,
        Err(e) => return format_err(16, format!("manifest is not valid JSON: {e}")),
    };
    let blob_start = 16 + manifest_len;
    let blob = &bytes[blob_start..checksum_start];

    let projection = manifest
        .projection
        .as_ref()
        .map(|p| {
            let values = take_values(blob, blob_start, p.offset, p.len)?;
            Mat::new(p.rows, p.cols, values).map_err(ContainerError::from)
        })
        .transpose()?;
    let probes = manifest
        .probes
        .as_ref()
        .map(|refs| {
            refs.iter()
                .map(|p| {
                    let values = take_values(blob, blob_start, p.offset, p.len)?;
                    Tensor::new(p.shape.clone(), values).map_err(ContainerError::from)
                })
                .collect::<Result<Vec<Tensor>>>()
        })
        .transpose()?;
    let message = SignatureMessage::new(manifest.message)?;
    if message.len() != manifest.bits {
        return format_err(16, "message length disagrees with declared bit count");
    }
    let key = SecretKey {
        scheme: manifest.scheme,
        layer_index: manifest.layer_index,
        expected_dim: manifest.expected_dim,
        projection,
        positions: manifest.positions,
        probes,
        delta: manifest.delta,
    };
    Ok((key, message))
}

pub fn save_key(key: &SecretKey, message: &SignatureMessage, path: &Path) -> Result<()> {
    fs::write(path, key_to_bytes(key, message))?;
    Ok(())
}

pub fn load_key(path: &Path) -> Result<(SecretKey, SignatureMessage)> {
    let bytes = fs::read(path)?;
    key_from_bytes(&bytes)
}
