//! Checkpoint format: a flat binary of little-endian f32 values plus a
//! JSON manifest mapping tensor names to shapes and element offsets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("checkpoint format: {0}")]
    Format(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// One tensor to serialize.
pub struct TensorOut<'a> {
    pub name: &'a str,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

/// One tensor read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorIn {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    /// Offset into the binary file, counted in f32 elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    extra: serde_json::Value,
}

/// Write tensors and sidecar metadata. Offsets follow list order.
pub fn save(
    bin_path: &Path,
    manifest_path: &Path,
    tensors: &[TensorOut<'_>],
    extra: &serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut bin: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for t in tensors {
        if t.values.len() != t.rows * t.cols {
            return Err(CheckpointError::Format(format!(
                "tensor {}: {} values for shape {}x{}",
                t.name,
                t.values.len(),
                t.rows,
                t.cols
            )));
        }
        entries.push(ManifestEntry {
            name: t.name.to_string(),
            shape: [t.rows, t.cols],
            offset,
        });
        for &v in t.values {
            bin.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += t.values.len();
    }
    let manifest = Manifest { tensors: entries, extra: extra.clone() };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    fs::write(bin_path, &bin).map_err(|e| io_err(bin_path, e))?;
    fs::write(manifest_path, json).map_err(|e| io_err(manifest_path, e))?;
    Ok(())
}

/// Read a checkpoint back. Returns tensors in manifest order plus the
/// sidecar metadata.
pub fn load(
    bin_path: &Path,
    manifest_path: &Path,
) -> Result<(Vec<TensorIn>, serde_json::Value), CheckpointError> {
    let json = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let bin = fs::read(bin_path).map_err(|e| io_err(bin_path, e))?;
    if bin.len() % 4 != 0 {
        return Err(CheckpointError::Format(format!(
            "binary length {} is not a multiple of 4",
            bin.len()
        )));
    }
    let total = bin.len() / 4;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let count = e.shape[0] * e.shape[1];
        let end = e.offset.checked_add(count).ok_or_else(|| {
            CheckpointError::Format(format!("tensor {}: offset overflow", e.name))
        })?;
        if end > total {
            return Err(CheckpointError::Format(format!(
                "tensor {}: spans elements {}..{end} but file has {total}",
                e.name, e.offset
            )));
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let at = (e.offset + i) * 4;
            let v = f32::from_le_bytes([bin[at], bin[at + 1], bin[at + 2], bin[at + 3]]);
            values.push(v as f64);
        }
        tensors.push(TensorIn { name: e.name.clone(), rows: e.shape[0], cols: e.shape[1], values });
    }
    Ok((tensors, manifest.extra))
}
