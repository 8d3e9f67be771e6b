//! The full stacked model: alternating structure and representation layers
//! with per-layer parameters, a video-level representation, and a
//! multi-label classifier head.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdnError};
use crate::graphconv::{graph_conv_block, segment_pool, GraphConvParams};
use crate::matrix::Matrix;
use crate::optim::AdamParams;
use crate::structure::{
    kernel_adjacency, recursive_partition, refine_adjacency_op, target_subgraph_count, Adjacency,
    KernelParams, Partition,
};
use crate::tape::{affine, ParamId, ParamStore, Tape, Var};

/// Model hyperparameters; stored verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TDNConfig {
    pub feature_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub optimizer: AdamParams,
    pub seed: u64,
    /// Videos per gradient step.
    pub batch_size: usize,
}

impl TDNConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 || self.num_layers == 0 {
            return Err(TdnError::Input(format!(
                "feature_dim, num_layers and num_classes must all be >= 1 \
                 (got {}, {}, {})",
                self.feature_dim, self.num_layers, self.num_classes
            )));
        }
        if self.batch_size == 0 {
            return Err(TdnError::Input("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter handles for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub kernel: KernelParams,
    pub conv: GraphConvParams,
}

/// A stack of structure/representation layers plus an affine classifier.
#[derive(Debug, Clone)]
pub struct TDNModel {
    pub config: TDNConfig,
    pub store: ParamStore,
    pub layers: Vec<LayerParams>,
    pub classifier_w: ParamId,
    pub classifier_b: ParamId,
}

/// Per-layer record of what the forward pass decided and produced.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Affinities before refinement.
    pub adjacency: Matrix,
    /// Affinities after cross-segment masking.
    pub refined: Matrix,
    pub partition: Partition,
}

/// Forward-pass artifacts kept as plain values (detached from the tape).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Video-level representation, 1 x feature_dim.
    pub video_repr: Matrix,
    /// Classifier output, 1 x num_classes.
    pub logits: Matrix,
}

impl TDNModel {
    /// Fresh model with seeded initialization: weights uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases zero, layer-norm gains
    /// one.
    pub fn init(config: &TDNConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = config.feature_dim;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let kernel = KernelParams::init(&mut store, &format!("layer{l}.kernel"), dim, &mut rng);
            let conv = GraphConvParams::init(&mut store, &format!("layer{l}.conv"), dim, &mut rng);
            layers.push(LayerParams { kernel, conv });
        }
        let classifier_w =
            store.add_uniform("classifier.weight", dim, config.num_classes, &mut rng);
        let classifier_b = store.add_zeros("classifier.bias", 1, config.num_classes);
        Ok(TDNModel { config: config.clone(), store, layers, classifier_w, classifier_b })
    }

    /// All parameter handles, in canonical (registration) order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids()
    }

    /// Run the stack on an `N x feature_dim` sequence.
    ///
    /// Per layer: estimate affinities, partition them (recomputed from the
    /// current affinities unless `frozen` pins the decision), mask to the
    /// partition blocks, update representations, and pool per segment.
    /// After the last layer any remaining rows are averaged into the 1-row
    /// video representation feeding the classifier.
    ///
    /// The partition decision itself is non-differentiable and enters the
    /// tape only as a constant mask; `frozen` exists so perturbation-based
    /// checks can hold it fixed.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &Matrix,
        frozen: Option<&[Partition]>,
    ) -> Result<(ForwardTrace, Var)> {
        self.forward_on(tape, &self.store, features, frozen)
    }

    /// Like [`TDNModel::forward`] but reading parameter values from an
    /// external store (which must share this model's registration layout);
    /// lets perturbation-based checks evaluate without cloning the model.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: &Matrix,
        frozen: Option<&[Partition]>,
    ) -> Result<(ForwardTrace, Var)> {
        if features.cols() != self.config.feature_dim {
            return Err(TdnError::Input(format!(
                "feature width {} does not match model feature_dim {}",
                features.cols(),
                self.config.feature_dim
            )));
        }
        if let Some(parts) = frozen {
            if parts.len() != self.layers.len() {
                return Err(TdnError::Contract(format!(
                    "{} frozen partitions for {} layers",
                    parts.len(),
                    self.layers.len()
                )));
            }
        }

        let mut current = tape.constant(features.clone());
        let mut layer_traces = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let n = tape.value(current).rows();
            let a_var = kernel_adjacency(tape, store, current, &layer.kernel)?;
            let a_val = tape.value(a_var).clone();
            let partition = match frozen {
                Some(parts) => parts[idx].clone(),
                None => {
                    let k = target_subgraph_count(n);
                    recursive_partition(&Adjacency::new(a_val.clone())?, k)?
                }
            };
            if partition.num_frames() != n {
                return Err(TdnError::Contract(format!(
                    "partition for layer {idx} covers {} of {n} nodes",
                    partition.num_frames()
                )));
            }
            let refined_var = refine_adjacency_op(tape, a_var, &partition)?;
            let refined_val = tape.value(refined_var).clone();
            let out = graph_conv_block(tape, store, current, refined_var, &layer.conv)?;
            let pooled = segment_pool(tape, out.z, &partition)?;
            layer_traces.push(LayerTrace { adjacency: a_val, refined: refined_val, partition });
            current = pooled;
        }

        let video = if tape.value(current).rows() > 1 {
            tape.mean_rows(current)
        } else {
            current
        };
        let w = tape.param(store, self.classifier_w);
        let b = tape.param(store, self.classifier_b);
        let logits = affine(tape, video, w, b)?;
        let trace = ForwardTrace {
            layers: layer_traces,
            video_repr: tape.value(video).clone(),
            logits: tape.value(logits).clone(),
        };
        Ok((trace, logits))
    }

    /// Forward pass discarding the tape; returns the trace only.
    pub fn run(&self, features: &Matrix) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        Ok(self.forward(&mut tape, features, None)?.0)
    }

    /// Per-class sigmoid confidence scores for one sequence.
    pub fn predict_scores(&self, features: &Matrix) -> Result<Vec<f64>> {
        let trace = self.run(features)?;
        Ok(trace.logits.row(0).iter().map(|&z| crate::matrix::stable_sigmoid(z)).collect())
    }
}

/// Mean over classes of binary cross-entropy between `sigmoid(logits)` and
/// the indicator of `labels`.
pub fn bce_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &BTreeSet<usize>,
    num_classes: usize,
) -> Result<Var> {
    if let Some(&max) = labels.iter().next_back() {
        if max >= num_classes {
            return Err(TdnError::Input(format!(
                "label {max} out of range for {num_classes} classes"
            )));
        }
    }
    let mut targets = vec![0.0; num_classes];
    for &l in labels {
        targets[l] = 1.0;
    }
    tape.bce_with_logits(logits, targets)
}
