//! End-to-end training: per-video forward/backward with gradient
//! accumulation over a batch of videos per optimizer step, a deterministic
//! id-hash holdout split, and per-epoch loss / holdout-GAP logging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Result, TdnError};
use crate::metrics::{gap, predict_topk};
use crate::model::{bce_loss, TDNConfig, TDNModel};
use crate::optim::{adam_step, AdamState};
use crate::tape::Tape;

/// Settings that drive training but are not part of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Fraction of videos held out for validation, split by id hash.
    pub val_frac: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 20, val_frac: 0.2 }
    }
}

/// One training log line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Holdout GAP; absent when the validation split is empty.
    pub val_gap: Option<f64>,
}

/// 64-bit FNV-1a, the id hash behind the deterministic holdout split.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Split item indices into (train, validation). The `round(n * val_frac)`
/// ids with the largest FNV-1a hashes (ties by id) are held out; both halves
/// keep dataset order. Depends only on the ids, never on file order or RNG
/// state.
pub fn split_by_id_hash(dataset: &Dataset, val_frac: f64) -> (Vec<usize>, Vec<usize>) {
    let n = dataset.items.len();
    let val_count = ((n as f64) * val_frac.clamp(0.0, 1.0)).round() as usize;
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        let (ia, ib) = (&dataset.items[a].id, &dataset.items[b].id);
        fnv1a64(ib.as_bytes())
            .cmp(&fnv1a64(ia.as_bytes()))
            .then_with(|| ia.cmp(ib))
    });
    let mut is_val = vec![false; n];
    for &i in ranked.iter().take(val_count) {
        is_val[i] = true;
    }
    let train = (0..n).filter(|&i| !is_val[i]).collect();
    let val = (0..n).filter(|&i| is_val[i]).collect();
    (train, val)
}

fn validate_dataset(dataset: &Dataset, config: &TDNConfig) -> Result<()> {
    if dataset.items.is_empty() {
        return Err(TdnError::Input("empty dataset".into()));
    }
    for item in &dataset.items {
        if item.features.cols() != config.feature_dim {
            return Err(TdnError::Input(format!(
                "video {:?} has feature width {}, model expects {}",
                item.id,
                item.features.cols(),
                config.feature_dim
            )));
        }
        if let Some(&max) = item.labels.iter().next_back() {
            if max >= config.num_classes {
                return Err(TdnError::Input(format!(
                    "video {:?} has label {max}, model has {} classes",
                    item.id, config.num_classes
                )));
            }
        }
    }
    Ok(())
}

/// GAP of `model` over the given dataset items, with per-video top-k lists
/// (`k` clamped to the class count). Videos are evaluated in index order so
/// the pooled ranking is reproducible.
pub fn evaluate_gap(model: &TDNModel, dataset: &Dataset, indices: &[usize], k: usize) -> Result<f64> {
    let k = k.min(dataset.classes).max(1);
    let mut predictions = Vec::with_capacity(indices.len());
    let mut truths = Vec::with_capacity(indices.len());
    for &i in indices {
        let item = &dataset.items[i];
        let trace = model.run(&item.features)?;
        predictions.push(predict_topk(&trace.logits, k)?);
        truths.push(item.labels.clone());
    }
    gap(&predictions, &truths)
}

/// Train a fresh model on the dataset's train split.
///
/// Each step accumulates gradients over up to `batch_size` videos (one
/// forward/backward per video — sequences have heterogeneous lengths) and
/// applies one Adam update. The reported loss is the mean per-video loss of
/// the epoch; the holdout GAP is computed after each epoch. Fixed seeds make
/// the whole run, including the log, bit-reproducible.
pub fn train(
    dataset: &Dataset,
    config: &TDNConfig,
    options: &TrainOptions,
) -> Result<(TDNModel, Vec<EpochLog>)> {
    config.validate()?;
    validate_dataset(dataset, config)?;

    let (train_idx, val_idx) = split_by_id_hash(dataset, options.val_frac);
    if train_idx.is_empty() {
        return Err(TdnError::Input("training split is empty".into()));
    }

    let mut model = TDNModel::init(config)?;
    let mut adam = AdamState::new(&model.store, config.optimizer);
    // Separate stream from the init draw so epoch order is independent of
    // the parameter shapes.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5175_FFAB_2E01_77D3);

    let mut logs = Vec::with_capacity(options.epochs);
    for epoch in 1..=options.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let item = &dataset.items[i];
                let mut tape = Tape::new();
                let (_, logits) = model.forward(&mut tape, &item.features, None)?;
                let loss = bce_loss(&mut tape, logits, &item.labels, config.num_classes)?;
                loss_sum += tape.value(loss).get(0, 0);
                let scaled = tape.scale(loss, batch_scale);
                tape.backward(scaled, &mut model.store)?;
            }
            adam_step(&mut model.store, &mut adam);
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_gap = if val_idx.is_empty() {
            None
        } else {
            Some(evaluate_gap(&model, dataset, &val_idx, 20)?)
        };
        logs.push(EpochLog { epoch, train_loss, val_gap });
    }
    Ok((model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dataset_from_synth, synth_generate, SyntheticSpec};
    use crate::optim::AdamParams;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            videos: 16,
            frames_min: 16,
            frames_max: 16,
            dim: 6,
            classes: 4,
            segments: 2,
            noise: 0.1,
            seed: 5,
        }
    }

    fn small_config(seed: u64, lr: f64) -> TDNConfig {
        TDNConfig {
            feature_dim: 6,
            num_layers: 2,
            num_classes: 4,
            optimizer: AdamParams { lr, ..AdamParams::default() },
            seed,
            batch_size: 4,
        }
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let ds = dataset_from_synth(&synth_generate(&small_spec()).unwrap()).unwrap();
        let (train, val) = split_by_id_hash(&ds, 0.25);
        assert_eq!(val.len(), 4);
        assert_eq!(train.len(), 12);
        let (train2, val2) = split_by_id_hash(&ds, 0.25);
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        let (all, none) = split_by_id_hash(&ds, 0.0);
        assert_eq!(all.len(), 16);
        assert!(none.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_params_and_loss_fixed() {
        let ds = dataset_from_synth(&synth_generate(&small_spec()).unwrap()).unwrap();
        let config = small_config(3, 0.0);
        let init = TDNModel::init(&config).unwrap();
        let (model, logs) = train(&ds, &config, &TrainOptions { epochs: 3, val_frac: 0.2 }).unwrap();
        for (id_a, id_b) in init.param_ids().into_iter().zip(model.param_ids()) {
            let a = init.store.value(id_a);
            let b = model.store.value(id_b);
            assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        for log in &logs[1..] {
            assert!((log.train_loss - logs[0].train_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let ds = dataset_from_synth(&synth_generate(&small_spec()).unwrap()).unwrap();
        let config = small_config(9, 1e-3);
        let opts = TrainOptions { epochs: 3, val_frac: 0.25 };
        let (_, logs_a) = train(&ds, &config, &opts).unwrap();
        let (_, logs_b) = train(&ds, &config, &opts).unwrap();
        assert_eq!(logs_a, logs_b);
        assert_eq!(
            logs_a.iter().map(|l| l.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3],
            "epoch indices must be monotone"
        );
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let ds = dataset_from_synth(&synth_generate(&small_spec()).unwrap()).unwrap();
        let config = small_config(4, 1e-3);
        let (model, logs) = train(&ds, &config, &TrainOptions { epochs: 0, val_frac: 0.2 }).unwrap();
        assert!(logs.is_empty());
        let fresh = TDNModel::init(&config).unwrap();
        for (a, b) in model.param_ids().into_iter().zip(fresh.param_ids()) {
            assert_eq!(model.store.value(a), fresh.store.value(b));
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset { classes: 2, items: vec![] };
        let err = train(&ds, &small_config(1, 1e-3), &TrainOptions::default()).unwrap_err();
        assert!(matches!(err, TdnError::Input(_)));
    }
}
