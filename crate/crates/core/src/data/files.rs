//! On-disk formats: binary feature files, JSON manifest, JSONL labels and
//! planted truth.
//!
//! Feature file layout: magic `TDNF`, little-endian `u32` version, `u32`
//! frame count, `u32` width, then `frames * dim` little-endian `f32`
//! values, row-major. Storage is single precision; readers promote to
//! double.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdnError};
use crate::matrix::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const FEATURES_DIR: &str = "features";

const FEATURE_MAGIC: &[u8; 4] = b"TDNF";
const FEATURE_VERSION: u32 = 1;

/// A frame-feature sequence as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub id: String,
    pub frames: usize,
    pub dim: usize,
    /// Row-major `frames * dim` single-precision values.
    pub values: Vec<f32>,
}

impl FeatureFile {
    pub fn new(id: impl Into<String>, frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(TdnError::Input(format!(
                "feature file needs at least one frame and one dimension, got {frames}x{dim}"
            )));
        }
        if values.len() != frames * dim {
            return Err(TdnError::Input(format!(
                "feature payload has {} values, expected {frames}x{dim}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(TdnError::Input(format!("non-finite feature value {bad}")));
        }
        Ok(FeatureFile { id: id.into(), frames, dim, values })
    }

    /// Promote to a double-precision matrix (exact).
    pub fn to_matrix(&self) -> Result<Matrix> {
        Matrix::new(self.frames, self.dim, self.values.iter().map(|&v| v as f64).collect())
    }
}

pub fn write_features(f: &FeatureFile, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + f.values.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.frames as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim as u32).to_le_bytes());
    for v in &f.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a feature file; the id is taken from the file stem.
pub fn read_features(path: &Path) -> Result<FeatureFile> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(TdnError::Format(format!(
            "feature file {path:?} too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(TdnError::Format(format!(
            "bad feature magic {:02x?} in {path:?}",
            &bytes[0..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(TdnError::Format(format!(
            "unsupported feature version {version} in {path:?}"
        )));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + frames.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or_else(
        || TdnError::Format(format!("feature header overflow in {path:?}")),
    )?;
    if bytes.len() != expected {
        return Err(TdnError::Format(format!(
            "feature payload is {} bytes, header {frames}x{dim} expects {expected} \
             (file {path:?})",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(frames * dim);
    for i in 0..frames * dim {
        let off = 16 + i * 4;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(TdnError::Format(format!(
                "non-finite value at index {i} in {path:?}"
            )));
        }
        values.push(v);
    }
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    FeatureFile::new(id, frames, dim, values)
}

/// Manifest binding ids to feature-file paths (relative to the manifest's
/// directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: usize,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub features: String,
}

/// One multi-label ground-truth record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub labels: Vec<usize>,
}

/// Planted segmentation for one synthetic video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub cuts: Vec<usize>,
    pub segment_classes: Vec<usize>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for rec in records {
        text.push_str(&serde_json::to_string(rec)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_labels(path: &Path, records: &[LabelRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    read_jsonl(path)
}

pub fn write_truth(path: &Path, records: &[TruthRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    read_jsonl(path)
}
