//! Ranking metrics for multi-label prediction: per-video top-k confidence
//! lists and the globally pooled average precision over all videos.

use std::collections::BTreeSet;

use crate::error::{Result, TdnError};
use crate::matrix::{stable_sigmoid, Matrix};

/// Top-`k` classes of a 1 x C logit row by sigmoid confidence, descending;
/// equal scores order by ascending class index.
pub fn predict_topk(logits: &Matrix, k: usize) -> Result<Vec<(usize, f64)>> {
    let classes = logits.cols();
    if logits.rows() != 1 {
        return Err(TdnError::Contract(format!(
            "predict_topk expects a 1-row logit matrix, got {} rows",
            logits.rows()
        )));
    }
    if k == 0 || k > classes {
        return Err(TdnError::Contract(format!(
            "k must be in [1, {classes}], got {k}"
        )));
    }
    let mut scored: Vec<(usize, f64)> = logits
        .row(0)
        .iter()
        .enumerate()
        .map(|(c, &z)| (c, stable_sigmoid(z)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Global average precision over pooled per-video predictions.
///
/// All (video, class, score) triples are ranked together by score
/// descending (ties keep video order, then the order predictions were
/// listed in). With `P` the total ground-truth label count, the result is
/// `sum_i precision@i * rel_i / P`.
pub fn gap(predictions: &[Vec<(usize, f64)>], ground_truth: &[BTreeSet<usize>]) -> Result<f64> {
    if predictions.len() != ground_truth.len() {
        return Err(TdnError::Input(format!(
            "{} prediction lists vs {} ground-truth sets",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let total_positives: usize = ground_truth.iter().map(|s| s.len()).sum();
    if total_positives == 0 {
        return Err(TdnError::Input(
            "global average precision is undefined without ground-truth labels".into(),
        ));
    }

    let mut pooled: Vec<(usize, usize, f64)> = Vec::new();
    for (video, preds) in predictions.iter().enumerate() {
        for &(class, score) in preds {
            pooled.push((video, class, score));
        }
    }
    pooled.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());

    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &(video, class, _)) in pooled.iter().enumerate() {
        if ground_truth[video].contains(&class) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total_positives as f64)
}
