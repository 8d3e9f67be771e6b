//! Temporal dependency networks for multi-label sequence classification.
//!
//! A sequence of frame features is treated as a graph whose edge weights
//! are learned by a dot-product kernel. A temporally constrained recursive
//! normalized cut partitions the frames into contiguous segments, the
//! adjacency is masked to the segment blocks, graph convolutions update the
//! frame representations, and per-segment pooling coarsens the sequence.
//! Stacking these layers turns frames into a single video-level vector that
//! feeds a multi-label classifier; everything upstream of the (discrete)
//! cut decisions is differentiable, so the whole stack trains end to end.
//!
//! The crate is organized along that pipeline:
//!
//! - [`matrix`], [`tape`], [`optim`], [`fdcheck`]: dense `f64` matrices, a
//!   reverse-mode differentiation tape over the fixed op set the model
//!   needs, bias-corrected Adam, and a finite-difference gradient checker.
//! - [`structure`]: kernel affinities, the constrained normalized cut, and
//!   block-diagonal refinement.
//! - [`graphconv`]: graph-convolution blocks and segment pooling.
//! - [`model`], [`mod@train`], [`metrics`], [`checkpoint`]: the stacked model,
//!   the training loop, top-k / global-average-precision evaluation, and a
//!   binary checkpoint format.
//! - [`data`]: feature-file and manifest formats, a synthetic generator
//!   with planted structure, and boundary-recovery scoring.
//!
//! All computation is single-threaded and deterministic: fixed seeds give
//! bit-identical parameters, logs, and files.

// Numeric kernels index several arrays with one loop variable; iterator
// chains would obscure them.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fdcheck;
pub mod graphconv;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod structure;
pub mod tape;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{
    boundary_f1, dataset_from_synth, load_dataset, read_features, synth_generate,
    write_features, write_synth_dataset, Dataset, DatasetItem, FeatureFile, SynthOutput,
    SyntheticSpec,
};
pub use error::{Result, TdnError};
pub use fdcheck::finite_diff_check;
pub use graphconv::{graph_conv_block, rw_normalize, segment_pool, GraphConvParams};
pub use matrix::Matrix;
pub use metrics::{gap, predict_topk};
pub use model::{bce_loss, ForwardTrace, LayerTrace, TDNConfig, TDNModel};
pub use optim::{adam_step, AdamParams, AdamState};
pub use structure::{
    best_cut, kernel_adjacency, ncut_value, recursive_partition, refine_adjacency,
    target_subgraph_count, Adjacency, KernelParams, Partition,
};
pub use tape::{affine, Param, ParamId, ParamStore, Tape, Var};
pub use train::{evaluate_gap, split_by_id_hash, train, EpochLog, TrainOptions};
