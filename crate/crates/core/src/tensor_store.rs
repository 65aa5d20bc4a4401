//! Tensor container files and checkpoint-series manifests.
//!
//! The container is the F32-only subset of the safetensors layout:
//!
//! ```text
//! [0, 8)        u64 little-endian, header length H
//! [8, 8+H)      UTF-8 JSON object: name -> {"dtype":"F32","shape":[..],"data_offsets":[b,e]}
//!               plus an optional "__metadata__" string map, which is ignored
//! [8+H, EOF)    payload; each tensor occupies [b, e) as little-endian f32, row-major
//! ```
//!
//! Offsets must tile the payload exactly: contiguous, disjoint and ascending.
//! Tensors are returned in payload order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";
const F32_TAG: &str = "F32";

/// Named row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct F32Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl F32Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.contains(&0) {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("shape {shape:?} has a zero dimension"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor {
                name,
                reason: format!(
                    "shape {shape:?} holds {numel} elements but data has {}",
                    data.len()
                ),
            });
        }
        Ok(F32Tensor { name, shape, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bitwise equality, so NaN payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &F32Tensor) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Serializes tensors in the given order into container bytes.
pub fn encode_container(tensors: &[F32Tensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut header = Map::new();
    let mut offset = 0usize;
    for t in tensors {
        if !seen.insert(t.name()) {
            return Err(Error::DuplicateName(t.name().to_string()));
        }
        if t.name() == METADATA_KEY {
            return Err(Error::InvalidTensor {
                name: t.name().to_string(),
                reason: "name is reserved".into(),
            });
        }
        let end = offset + 4 * t.numel();
        header.insert(
            t.name().to_string(),
            json!({ "dtype": F32_TAG, "shape": t.shape(), "data_offsets": [offset, end] }),
        );
        offset = end;
    }
    let header = serde_json::to_string(&Value::Object(header))
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;

    let mut bytes = Vec::with_capacity(8 + header.len() + offset);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for t in tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn write_container(tensors: &[F32Tensor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    /// Reject tensors containing NaN or infinity.
    pub check_finite: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { check_finite: true }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

pub fn decode_container(bytes: &[u8], options: ReadOptions) -> Result<Vec<F32Tensor>> {
    if bytes.len() < 8 {
        return Err(Error::Truncated(format!(
            "{} bytes, need at least 8 for the header length",
            bytes.len()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let available = (bytes.len() - 8) as u64;
    if header_len > available {
        return Err(Error::Truncated(format!(
            "header length {header_len} exceeds the {available} bytes after the length field"
        )));
    }
    let header_end = 8 + header_len as usize;
    let header = std::str::from_utf8(&bytes[8..header_end])
        .map_err(|e| Error::MalformedHeader(format!("not UTF-8: {e}")))?;
    let header: Map<String, Value> =
        serde_json::from_str(header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut entries = Vec::with_capacity(header.len());
    for (name, value) in header {
        if name == METADATA_KEY {
            let ok = value
                .as_object()
                .is_some_and(|m| m.values().all(Value::is_string));
            if !ok {
                return Err(Error::MalformedHeader(
                    "__metadata__ must map strings to strings".into(),
                ));
            }
            continue;
        }
        let info: TensorInfo = serde_json::from_value(value)
            .map_err(|e| Error::MalformedHeader(format!("entry {name:?}: {e}")))?;
        if info.dtype != F32_TAG {
            return Err(Error::UnsupportedDtype {
                name,
                dtype: info.dtype,
            });
        }
        entries.push((name, info));
    }

    entries.sort_by_key(|(_, info)| info.data_offsets[0]);
    let mut cursor = 0u64;
    let mut tensors = Vec::with_capacity(entries.len());
    for (name, info) in entries {
        let [begin, end] = info.data_offsets;
        if begin != cursor || end < begin {
            return Err(Error::InvalidOffsets(format!(
                "{name:?}: region [{begin}, {end}) does not continue at byte {cursor}"
            )));
        }
        if end > payload.len() as u64 {
            return Err(Error::InvalidOffsets(format!(
                "{name:?}: region [{begin}, {end}) exceeds payload of {} bytes",
                payload.len()
            )));
        }
        let numel = info
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if numel.and_then(|n| n.checked_mul(4)) != Some(end - begin) {
            return Err(Error::InvalidOffsets(format!(
                "{name:?}: region of {} bytes does not match shape {:?}",
                end - begin,
                info.shape
            )));
        }
        let data: Vec<f32> = payload[begin as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if options.check_finite && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        tensors.push(F32Tensor::new(name, info.shape, data)?);
        cursor = end;
    }
    if cursor != payload.len() as u64 {
        return Err(Error::InvalidOffsets(format!(
            "tensors cover {cursor} of {} payload bytes",
            payload.len()
        )));
    }
    Ok(tensors)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<F32Tensor>> {
    read_container_with(path, ReadOptions::default())
}

pub fn read_container_with(path: impl AsRef<Path>, options: ReadOptions) -> Result<Vec<F32Tensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, options)
}

/// Tensor-name selector: exact name, or a prefix when it ends in `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPattern(String);

impl LayerPattern {
    pub fn new(pattern: impl Into<String>) -> Self {
        LayerPattern(pattern.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn matches(&self, name: &str) -> bool {
        match self.0.strip_suffix('*') {
            Some(prefix) => name.starts_with(prefix),
            None => name == self.0,
        }
    }

    pub fn select<'a>(&self, tensors: &'a [F32Tensor]) -> Vec<&'a F32Tensor> {
        tensors.iter().filter(|t| self.matches(t.name())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub path: PathBuf,
}

/// Epoch-ordered checkpoint containers plus the layer they are analyzed for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointSeries {
    pub layer_pattern: LayerPattern,
    pub entries: Vec<Checkpoint>,
}

impl CheckpointSeries {
    pub fn new(layer_pattern: LayerPattern, entries: Vec<Checkpoint>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::NonIncreasingEpochs {
                    prev: pair[0].epoch,
                    next: pair[1].epoch,
                });
            }
        }
        Ok(CheckpointSeries {
            layer_pattern,
            entries,
        })
    }

    pub fn epochs(&self) -> Vec<u64> {
        self.entries.iter().map(|c| c.epoch).collect()
    }

    pub fn first(&self) -> Option<&Checkpoint> {
        self.entries.first()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.entries.last()
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    epoch: u64,
    path: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    layer: String,
    checkpoints: Vec<ManifestEntry>,
}

/// Parses a manifest. Relative checkpoint paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<CheckpointSeries> {
    let doc: ManifestDoc =
        serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
    let entries = doc
        .checkpoints
        .into_iter()
        .map(|e| {
            let path = if e.path.is_absolute() {
                e.path
            } else {
                base_dir.join(e.path)
            };
            Checkpoint {
                epoch: e.epoch,
                path,
            }
        })
        .collect();
    CheckpointSeries::new(LayerPattern::new(doc.layer), entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CheckpointSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new(""));
    let series = parse_manifest(&text, base_dir)?;
    if let Some(missing) = series.entries.iter().find(|c| !c.path.is_file()) {
        return Err(Error::UnresolvablePath(missing.path.clone()));
    }
    Ok(series)
}

/// Writes a manifest; paths are stored exactly as given.
pub fn write_manifest(series: &CheckpointSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = ManifestDoc {
        layer: series.layer_pattern.as_str().to_string(),
        checkpoints: series
            .entries
            .iter()
            .map(|c| ManifestEntry {
                epoch: c.epoch,
                path: c.path.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
