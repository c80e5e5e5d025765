//! Model container format.
//!
//! A single file: 8-byte magic `ECLMDL01`, a u64-LE length-prefixed UTF-8
//! JSON manifest, the weight blob (little-endian, row-major, conv kernels
//! in `[P][C][kh][kw]` order, bias appended per layer), and a trailing
//! CRC32 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use eclipse_core::graph::{DtypeTag, ModelGraph};
use eclipse_core::layer::{ActivationKind, ConvLayer, LayerNode, LinearLayer, PoolLayer};
use eclipse_core::linalg::Mat;
use eclipse_core::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ECLMDL01";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("model error: {0}")]
    Model(#[from] eclipse_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ContainerError>;

fn format_err<T>(offset: usize, reason: impl Into<String>) -> Result<T> {
    Err(ContainerError::Format {
        offset,
        reason: reason.into(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    input_shape: Vec<usize>,
    dtype: DtypeEntry,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DtypeEntry {
    F32,
    F64,
}

impl DtypeEntry {
    fn width(self) -> usize {
        match self {
            DtypeEntry::F32 => 4,
            DtypeEntry::F64 => 8,
        }
    }
}

impl From<DtypeTag> for DtypeEntry {
    fn from(tag: DtypeTag) -> Self {
        match tag {
            DtypeTag::F32 => DtypeEntry::F32,
            DtypeTag::F64 => DtypeEntry::F64,
        }
    }
}

impl From<DtypeEntry> for DtypeTag {
    fn from(entry: DtypeEntry) -> Self {
        match entry {
            DtypeEntry::F32 => DtypeTag::F32,
            DtypeEntry::F64 => DtypeTag::F64,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerEntry {
    Linear {
        rows: usize,
        cols: usize,
        activation: ActivationKind,
        dtype: DtypeEntry,
        offset: u64,
        len: u64,
    },
    Conv {
        maps: usize,
        channels: usize,
        kh: usize,
        kw: usize,
        padding: [usize; 4],
        stride: [usize; 2],
        activation: ActivationKind,
        dtype: DtypeEntry,
        offset: u64,
        len: u64,
    },
    Pool {
        size: usize,
        stride: usize,
    },
}

fn write_values(out: &mut Vec<u8>, values: &[f64], dtype: DtypeEntry) {
    match dtype {
        DtypeEntry::F32 => {
            for v in values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        DtypeEntry::F64 => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn read_values(blob: &[u8], dtype: DtypeEntry) -> Vec<f64> {
    match dtype {
        DtypeEntry::F32 => blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DtypeEntry::F64 => blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect(),
    }
}

/// Serialize a model to container bytes.
pub fn model_to_bytes(model: &ModelGraph) -> Vec<u8> {
    let dtype = DtypeEntry::from(model.dtype_tag());
    let width = dtype.width();
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(model.len());
    for node in model.layers() {
        match node {
            LayerNode::Linear(l) => {
                let offset = blob.len() as u64;
                write_values(&mut blob, l.weights().data(), dtype);
                write_values(&mut blob, l.bias(), dtype);
                entries.push(LayerEntry::Linear {
                    rows: l.input_dim(),
                    cols: l.output_dim(),
                    activation: l.activation(),
                    dtype,
                    offset,
                    len: ((l.weights().data().len() + l.bias().len()) * width) as u64,
                });
            }
            LayerNode::Conv(c) => {
                let offset = blob.len() as u64;
                write_values(&mut blob, c.kernel().data(), dtype);
                write_values(&mut blob, c.bias(), dtype);
                entries.push(LayerEntry::Conv {
                    maps: c.maps(),
                    channels: c.channels(),
                    kh: c.kernel_height(),
                    kw: c.kernel_width(),
                    padding: c.input_padding(),
                    stride: c.stride(),
                    activation: c.activation(),
                    dtype,
                    offset,
                    len: ((c.kernel().len() + c.bias().len()) * width) as u64,
                });
            }
            LayerNode::Pool(p) => {
                entries.push(LayerEntry::Pool {
                    size: p.size(),
                    stride: p.stride(),
                });
            }
        }
    }
    let manifest = Manifest {
        input_shape: model.input_shape().to_vec(),
        dtype,
        layers: entries,
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut bytes = Vec::with_capacity(16 + manifest_json.len() + blob.len() + 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    bytes.extend_from_slice(&blob);
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

/// Parse container bytes back into a model.
pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return format_err(bytes.len(), "file truncated before header completes");
    }
    if &bytes[..8] != MAGIC {
        return format_err(0, "bad magic, expected ECLMDL01");
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest_start = 16;
    let checksum_start = bytes.len() - 4;
    if manifest_start + manifest_len > checksum_start {
        return format_err(8, format!("manifest length {manifest_len} exceeds file"));
    }
    let stored = u32::from_le_bytes(bytes[checksum_start..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..checksum_start]);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }

    let manifest: Manifest =
        match serde_json::from_slice(&bytes[manifest_start..manifest_start + manifest_len]) {
            Ok(m) => m,
            Err(e) => return format_err(manifest_start, format!("manifest is not valid JSON: {e}")),
        };
    let blob_start = manifest_start + manifest_len;
    let blob = &bytes[blob_start..checksum_start];

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let node = match entry {
            LayerEntry::Linear {
                rows,
                cols,
                activation,
                dtype,
                offset,
                len,
            } => {
                let expected = (rows * cols + cols) * dtype.width();
                let values = slice_blob(blob, blob_start, *offset, *len, expected, i)?;
                let mut values = read_values(values, *dtype);
                let bias = values.split_off(rows * cols);
                let weights = Mat::new(*rows, *cols, values)?;
                LayerNode::Linear(LinearLayer::new(weights, bias, *activation)?)
            }
            LayerEntry::Conv {
                maps,
                channels,
                kh,
                kw,
                padding,
                stride,
                activation,
                dtype,
                offset,
                len,
            } => {
                let count = maps * channels * kh * kw;
                let expected = (count + maps) * dtype.width();
                let values = slice_blob(blob, blob_start, *offset, *len, expected, i)?;
                let mut values = read_values(values, *dtype);
                let bias = values.split_off(count);
                let kernel = Tensor::new(vec![*maps, *channels, *kh, *kw], values)?;
                LayerNode::Conv(ConvLayer::new(kernel, bias, *padding, *stride, *activation)?)
            }
            LayerEntry::Pool { size, stride } => LayerNode::Pool(PoolLayer::new(*size, *stride)?),
        };
        layers.push(node);
    }
    let model = ModelGraph::new(layers, manifest.input_shape, manifest.dtype.into())?;
    Ok(model)
}

fn slice_blob<'b>(
    blob: &'b [u8],
    blob_start: usize,
    offset: u64,
    len: u64,
    expected: usize,
    layer: usize,
) -> Result<&'b [u8]> {
    let offset = offset as usize;
    let len = len as usize;
    if len != expected {
        return format_err(
            blob_start + offset,
            format!("layer {layer} declares {len} blob bytes, dims require {expected}"),
        );
    }
    if offset + len > blob.len() {
        return format_err(
            blob_start + offset,
            format!(
                "layer {layer} blob [{offset}, {}) exceeds blob region of {} bytes",
                offset + len,
                blob.len()
            ),
        );
    }
    Ok(&blob[offset..offset + len])
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}
