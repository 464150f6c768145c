//! Checkpoints are a JSON header next to a flat little-endian f32 blob.
//! Tensors appear in the blob in header order: every parameter (image
//! branch, then GRU, then head) followed by batchnorm running statistics.

use std::path::{Path, PathBuf};

use magtac_nn::Real;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ForceModel, MagNormalizer, Mode, NamedTensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub mode: Mode,
    pub image_size: usize,
    pub window: usize,
    pub seed: u64,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub dtype: String,
    pub blob: String,
    pub mag_norm: MagNormalizer,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

/// Writes `<path>` (JSON header) and `<path>` with a `.bin` extension.
pub fn save_checkpoint<T: Real>(model: &ForceModel<T>, best_epoch: Option<usize>, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for t in model.state() {
        tensors.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            offset,
        });
        offset += t.data.len();
        for v in t.data {
            bytes.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        mode: model.mode(),
        image_size: model.image_size(),
        window: model.window(),
        seed: model.seed(),
        steps: model.steps,
        best_epoch,
        dtype: "f32le".into(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        mag_norm: model.mag_norm.clone(),
        tensors,
    };
    std::fs::write(&blob, bytes).map_err(Error::io(&blob))?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(path, text + "\n").map_err(Error::io(path))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ForceModel<T>, CheckpointHeader)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let corrupt = |reason: String| Error::CorruptManifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let blob = path.with_file_name(&header.blob);
    if !blob.exists() {
        return Err(Error::MissingInput(blob));
    }
    let bytes = std::fs::read(&blob).map_err(Error::io(&blob))?;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(Error::LengthMismatch {
            file: blob,
            expected: total as u64 * 4,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))).expect("f32 fits"))
        .collect();
    let state: Vec<NamedTensor<T>> = header
        .tensors
        .iter()
        .map(|t| {
            let len = t.shape.iter().product::<usize>();
            values
                .get(t.offset..t.offset + len)
                .map(|d| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: d.to_vec(),
                })
                .ok_or_else(|| corrupt(format!("tensor {} lies outside the blob", t.name)))
        })
        .collect::<Result<_>>()?;
    let mut model = ForceModel::new(header.mode, header.image_size, header.window, header.seed)?;
    model.load_state(&state).map_err(|e| corrupt(e.to_string()))?;
    model.mag_norm = header.mag_norm.clone();
    model.steps = header.steps;
    Ok((model, header))
}
