//! Datasets on disk and in memory.
//!
//! A dataset directory holds `manifest.json` (class count plus id -> feature
//! file bindings), a sibling `labels.jsonl` (one JSON object per line), the
//! feature files it references, and — for synthetic data — `truth.jsonl`
//! with the planted cuts and per-segment classes.

mod files;
mod synth;

pub use files::{
    read_features, read_labels, read_manifest, read_truth, write_features, write_labels,
    write_manifest, write_truth, FeatureFile, LabelRecord, Manifest, ManifestItem, TruthRecord,
    FEATURES_DIR, LABELS_FILE, MANIFEST_FILE, TRUTH_FILE,
};
pub use synth::{synth_generate, SynthOutput, SynthVideo, SyntheticSpec};

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use crate::error::{Result, TdnError};
use crate::matrix::Matrix;

/// A fully loaded dataset: features promoted to double precision, labels as
/// class sets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: usize,
    pub items: Vec<DatasetItem>,
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub features: Matrix,
    pub labels: BTreeSet<usize>,
}

/// Load a dataset directory (manifest, labels, features). All feature files
/// must share one width and ids must be unique; labels must fit the class
/// count.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    let mut by_id: std::collections::HashMap<&str, &LabelRecord> = Default::default();
    for rec in &labels {
        if by_id.insert(rec.id.as_str(), rec).is_some() {
            return Err(TdnError::Format(format!("duplicate label record for id {:?}", rec.id)));
        }
    }

    let mut seen: HashSet<&str> = HashSet::new();
    let mut items = Vec::with_capacity(manifest.items.len());
    let mut width: Option<usize> = None;
    for entry in &manifest.items {
        if !seen.insert(entry.id.as_str()) {
            return Err(TdnError::Format(format!("duplicate manifest id {:?}", entry.id)));
        }
        let feature = read_features(&dir.join(&entry.features))?;
        match width {
            None => width = Some(feature.dim),
            Some(w) if w != feature.dim => {
                return Err(TdnError::Format(format!(
                    "feature width {} for id {:?} differs from {w}",
                    feature.dim, entry.id
                )))
            }
            _ => {}
        }
        let rec = by_id.remove(entry.id.as_str()).ok_or_else(|| {
            TdnError::Format(format!("no label record for manifest id {:?}", entry.id))
        })?;
        let label_set: BTreeSet<usize> = rec.labels.iter().copied().collect();
        if let Some(&max) = label_set.iter().next_back() {
            if max >= manifest.classes {
                return Err(TdnError::Format(format!(
                    "label {max} for id {:?} exceeds class count {}",
                    entry.id, manifest.classes
                )));
            }
        }
        items.push(DatasetItem {
            id: entry.id.clone(),
            features: feature.to_matrix()?,
            labels: label_set,
        });
    }
    Ok(Dataset { classes: manifest.classes, items })
}

/// Materialize a synthetic dataset in memory, promoting the stored
/// single-precision features exactly as the file reader would.
pub fn dataset_from_synth(out: &SynthOutput) -> Result<Dataset> {
    let items = out
        .videos
        .iter()
        .map(|v| {
            Ok(DatasetItem {
                id: v.id.clone(),
                features: v.feature_file().to_matrix()?,
                labels: v.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { classes: out.classes, items })
}

/// Write a synthetic dataset as a loadable directory.
pub fn write_synth_dataset(dir: &Path, out: &SynthOutput) -> Result<()> {
    std::fs::create_dir_all(dir.join(FEATURES_DIR))?;
    let mut manifest = Manifest { classes: out.classes, items: Vec::new() };
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for video in &out.videos {
        let rel = format!("{FEATURES_DIR}/{}.tdnf", video.id);
        write_features(&video.feature_file(), &dir.join(&rel))?;
        manifest.items.push(ManifestItem { id: video.id.clone(), features: rel });
        labels.push(LabelRecord {
            id: video.id.clone(),
            labels: video.labels.iter().copied().collect(),
        });
        truth.push(TruthRecord {
            id: video.id.clone(),
            cuts: video.cuts.clone(),
            segment_classes: video.segment_classes.clone(),
        });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    write_labels(&dir.join(LABELS_FILE), &labels)?;
    write_truth(&dir.join(TRUTH_FILE), &truth)?;
    Ok(())
}

/// F1 of greedy one-to-one matching between two sorted cut lists, where a
/// pair matches when the indices differ by at most `tol` frames. Two empty
/// lists score 1.0.
pub fn boundary_f1(predicted: &[usize], planted: &[usize], tol: usize) -> f64 {
    if predicted.is_empty() && planted.is_empty() {
        return 1.0;
    }
    if predicted.is_empty() || planted.is_empty() {
        return 0.0;
    }
    let mut pred = predicted.to_vec();
    let mut truth = planted.to_vec();
    pred.sort_unstable();
    truth.sort_unstable();

    let (mut i, mut j, mut matched) = (0usize, 0usize, 0usize);
    while i < pred.len() && j < truth.len() {
        if pred[i].abs_diff(truth[j]) <= tol {
            matched += 1;
            i += 1;
            j += 1;
        } else if pred[i] < truth[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    if matched == 0 {
        return 0.0;
    }
    let precision = matched as f64 / pred.len() as f64;
    let recall = matched as f64 / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
