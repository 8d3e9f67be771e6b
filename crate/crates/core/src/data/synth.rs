//! Synthetic datasets with planted hierarchical structure.
//!
//! Each video is a sequence of contiguous segments; each segment draws a
//! distinct class whose center vector is fixed across the dataset. Frames
//! are the segment's center plus Gaussian noise, stored in single
//! precision. Labels are the set of segment classes, so both the
//! classification task and the planted cut positions are known exactly.
//!
//! Class centers are signed standard-basis vectors (a random choice of
//! coordinates and signs, scaled by 1.0). Distinct centers therefore have
//! exactly zero dot products: at noise 0 the cross-segment affinities of a
//! dot-product kernel vanish identically and the planted cuts are the
//! unique zero-cost boundaries. Cut positions are planted by recursive
//! halving with a small jitter (at most 1/16 of the interval), which keeps
//! each planted cut strictly closest to its interval's midpoint — the
//! configuration the recursive partitioner provably recovers when the
//! segment count equals the target sub-graph count.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::files::FeatureFile;
use crate::error::{Result, TdnError};
use crate::matrix::Matrix;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub videos: usize,
    /// Inclusive frame-count range; videos draw uniformly from it.
    pub frames_min: usize,
    pub frames_max: usize,
    pub dim: usize,
    pub classes: usize,
    /// Segments per video; each takes a distinct class.
    pub segments: usize,
    /// Standard deviation of the per-entry Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 {
            return Err(TdnError::Input("need at least one video".into()));
        }
        if self.segments == 0 {
            return Err(TdnError::Input("need at least one segment per video".into()));
        }
        if self.segments > self.classes {
            return Err(TdnError::Input(format!(
                "segments per video ({}) cannot exceed the class count ({})",
                self.segments, self.classes
            )));
        }
        if self.classes > self.dim {
            return Err(TdnError::Input(format!(
                "class count ({}) cannot exceed the feature dimension ({}): \
                 centers are mutually orthogonal basis vectors",
                self.classes, self.dim
            )));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(TdnError::Input(format!(
                "bad frame range [{}, {}]",
                self.frames_min, self.frames_max
            )));
        }
        if self.frames_min < self.segments {
            return Err(TdnError::Input(format!(
                "videos of {} frames cannot hold {} segments",
                self.frames_min, self.segments
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(TdnError::Input(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// One generated video with its planted truth.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub id: String,
    pub frames: usize,
    pub dim: usize,
    /// Row-major single-precision features, exactly as stored on disk.
    pub values: Vec<f32>,
    pub labels: BTreeSet<usize>,
    /// Segment start offsets, excluding 0, sorted.
    pub cuts: Vec<usize>,
    /// Class of each segment, in temporal order.
    pub segment_classes: Vec<usize>,
}

impl SynthVideo {
    pub fn feature_file(&self) -> FeatureFile {
        FeatureFile::new(self.id.clone(), self.frames, self.dim, self.values.clone())
            .expect("generated features are valid")
    }
}

/// A generated dataset plus the class centers that produced it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub classes: usize,
    pub dim: usize,
    /// classes x dim matrix of center vectors.
    pub centers: Matrix,
    pub videos: Vec<SynthVideo>,
}

/// Plant cut positions by recursive halving with bounded jitter. `lo + k`
/// and `hi - k` bounds keep every remaining segment at least one frame.
fn plant_cuts(rng: &mut ChaCha8Rng, lo: usize, hi: usize, segments: usize, out: &mut Vec<usize>) {
    if segments <= 1 {
        return;
    }
    let left = segments / 2;
    let right = segments - left;
    let len = hi - lo;
    let ideal = lo + (len * left + segments / 2) / segments;
    let bound = (len / 16) as i64;
    let jitter = if bound > 0 { rng.random_range(-bound..=bound) } else { 0 };
    let min_cut = (lo + left) as i64;
    let max_cut = (hi - right) as i64;
    let cut = (ideal as i64 + jitter).clamp(min_cut, max_cut) as usize;
    out.push(cut);
    plant_cuts(rng, lo, cut, left, out);
    plant_cuts(rng, cut, hi, right, out);
}

/// Generate a dataset; the same `spec` (seed included) yields bit-identical
/// output.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Signed standard-basis centers: random coordinates, random signs.
    let mut coords: Vec<usize> = (0..spec.dim).collect();
    coords.shuffle(&mut rng);
    let mut centers = Matrix::zeros(spec.classes, spec.dim);
    for class in 0..spec.classes {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        centers.set(class, coords[class], sign);
    }

    let normal = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).map_err(|e| TdnError::Input(e.to_string()))?)
    } else {
        None
    };

    let mut videos = Vec::with_capacity(spec.videos);
    for v in 0..spec.videos {
        let frames = rng.random_range(spec.frames_min..=spec.frames_max);
        let mut class_pool: Vec<usize> = (0..spec.classes).collect();
        class_pool.shuffle(&mut rng);
        let segment_classes: Vec<usize> = class_pool[..spec.segments].to_vec();

        let mut cuts = Vec::with_capacity(spec.segments - 1);
        plant_cuts(&mut rng, 0, frames, spec.segments, &mut cuts);
        cuts.sort_unstable();

        let mut values = Vec::with_capacity(frames * spec.dim);
        let mut boundaries = Vec::with_capacity(spec.segments + 1);
        boundaries.push(0);
        boundaries.extend_from_slice(&cuts);
        boundaries.push(frames);
        for (seg, &class) in segment_classes.iter().enumerate() {
            for _frame in boundaries[seg]..boundaries[seg + 1] {
                for d in 0..spec.dim {
                    let noise = match &normal {
                        Some(n) => n.sample(&mut rng),
                        None => 0.0,
                    };
                    values.push((centers.get(class, d) + noise) as f32);
                }
            }
        }

        videos.push(SynthVideo {
            id: format!("v{v:05}"),
            frames,
            dim: spec.dim,
            values,
            labels: segment_classes.iter().copied().collect(),
            cuts,
            segment_classes,
        });
    }
    Ok(SynthOutput { classes: spec.classes, dim: spec.dim, centers, videos })
}
