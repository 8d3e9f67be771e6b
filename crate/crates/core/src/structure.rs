//! Structure learning: kernel-estimated frame affinities and their
//! partitioning by a temporally constrained recursive normalized cut.
//!
//! Frame dependencies are scored as `relu(F F^T)` with `F` an affine map of
//! the node features. Because sequences are contiguous in time, a cut may
//! only split an interval into two sub-intervals, so the exact minimizer of
//! the normalized-cut objective is found by a linear scan over cut points.
//! Applying the scan recursively yields a partition into contiguous
//! segments, and masking cross-segment entries yields the refined,
//! block-diagonal adjacency.

use crate::error::{Result, TdnError};
use crate::matrix::Matrix;
use crate::tape::{affine, ParamId, ParamStore, Tape, Var};

/// Denominator guard for degenerate (all-zero) associations.
pub const ASSOC_EPS: f64 = 1e-12;

/// Tolerance for the adjacency symmetry invariant.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Parameters of the affinity kernel: a square weight and a row bias
/// matching the feature width they serve.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    pub wf: ParamId,
    pub bf: ParamId,
}

impl KernelParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        KernelParams {
            wf: store.add_uniform(format!("{prefix}.wf"), dim, dim, rng),
            bf: store.add_zeros(format!("{prefix}.bf"), 1, dim),
        }
    }

    /// Identity weight, zero bias: affinities become raw feature dot products.
    pub fn identity(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        KernelParams {
            wf: store.add(format!("{prefix}.wf"), Matrix::identity(dim)),
            bf: store.add_zeros(format!("{prefix}.bf"), 1, dim),
        }
    }
}

/// A symmetric nonnegative frame-dependency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency(Matrix);

impl Adjacency {
    /// Validates squareness, nonnegativity, and symmetry within
    /// [`SYMMETRY_TOL`].
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(TdnError::Contract(format!(
                "adjacency must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c);
                if v < 0.0 {
                    return Err(TdnError::Contract(format!(
                        "adjacency entry ({r},{c}) is negative: {v}"
                    )));
                }
                if (v - m.get(c, r)).abs() > SYMMETRY_TOL {
                    return Err(TdnError::Contract(format!(
                        "adjacency asymmetric at ({r},{c}): {v} vs {}",
                        m.get(c, r)
                    )));
                }
            }
        }
        Ok(Adjacency(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// An ordered list of nonempty, contiguous, disjoint intervals covering
/// `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    segments: Vec<(usize, usize)>,
}

impl Partition {
    pub fn new(segments: Vec<(usize, usize)>, n: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(TdnError::Contract("partition has no segments".into()));
        }
        let mut expected_start = 0;
        for &(s, e) in &segments {
            if s != expected_start || s >= e {
                return Err(TdnError::Contract(format!(
                    "bad segment [{s}, {e}) at expected start {expected_start}"
                )));
            }
            expected_start = e;
        }
        if expected_start != n {
            return Err(TdnError::Contract(format!(
                "partition covers [0, {expected_start}) but has {n} frames"
            )));
        }
        Ok(Partition { segments })
    }

    /// The trivial partition with a single segment `[0, n)`.
    pub fn single(n: usize) -> Self {
        Partition { segments: vec![(0, n)] }
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total frame count covered.
    pub fn num_frames(&self) -> usize {
        self.segments.last().map(|&(_, e)| e).unwrap_or(0)
    }

    /// Segment start offsets, excluding 0.
    pub fn cuts(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|&(s, _)| s).collect()
    }
}

/// Differentiable affinity estimation: `relu(F F^T)` with
/// `F = x @ wf + bf`. The output is symmetric and nonnegative by
/// construction.
pub fn kernel_adjacency(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    kernel: &KernelParams,
) -> Result<Var> {
    let wf = tape.param(store, kernel.wf);
    let bf = tape.param(store, kernel.bf);
    let f = affine(tape, x, wf, bf)?;
    let ft = tape.transpose(f);
    let gram = tape.matmul(f, ft)?;
    Ok(tape.relu(gram))
}

fn check_segment(n: usize, seg: (usize, usize)) -> Result<()> {
    let (s, e) = seg;
    if s >= e || e > n {
        return Err(TdnError::Contract(format!(
            "segment [{s}, {e}) out of range for {n} nodes"
        )));
    }
    Ok(())
}

fn ncut_from_sums(cut: f64, assoc1: f64, assoc2: f64) -> f64 {
    cut / assoc1.max(ASSOC_EPS) + cut / assoc2.max(ASSOC_EPS)
}

/// Normalized-cut objective for splitting `seg = [s, e)` at `t` into
/// `[s, t)` and `[t, e)`. Associations are row sums restricted to `seg`:
/// each recursion level treats its segment as the whole graph.
pub fn ncut_value(a: &Adjacency, seg: (usize, usize), t: usize) -> Result<f64> {
    check_segment(a.n(), seg)?;
    let (s, e) = seg;
    if t <= s || t >= e {
        return Err(TdnError::Contract(format!(
            "cut index {t} must lie strictly inside [{s}, {e})"
        )));
    }
    let m = a.matrix();
    let mut cut = 0.0;
    let mut assoc1 = 0.0;
    let mut assoc2 = 0.0;
    for i in s..t {
        for j in s..e {
            assoc1 += m.get(i, j);
        }
        for j in t..e {
            cut += m.get(i, j);
        }
    }
    for i in t..e {
        for j in s..e {
            assoc2 += m.get(i, j);
        }
    }
    Ok(ncut_from_sums(cut, assoc1, assoc2))
}

/// Exact minimizer of [`ncut_value`] over interior cut points of `seg`.
///
/// Scans every `t` in `(s, e)` using per-row prefix sums (O(len^2) total).
/// Exact ties prefer the cut closest to the segment midpoint, then the
/// smallest `t`; uniform and all-zero segments therefore split at the
/// middle rather than peeling single frames off the front.
pub fn best_cut(a: &Adjacency, seg: (usize, usize)) -> Result<usize> {
    check_segment(a.n(), seg)?;
    let (s, e) = seg;
    if e - s < 2 {
        return Err(TdnError::Contract(format!(
            "best_cut needs at least 2 nodes, segment [{s}, {e}) has {}",
            e - s
        )));
    }
    let m = a.matrix();
    let len = e - s;
    // prefix[i][j] = sum of row s+i over columns [s, s+j)
    let mut prefix = vec![vec![0.0f64; len + 1]; len];
    for i in 0..len {
        for j in 0..len {
            prefix[i][j + 1] = prefix[i][j] + m.get(s + i, s + j);
        }
    }
    let row_tot: Vec<f64> = (0..len).map(|i| prefix[i][len]).collect();
    let total: f64 = row_tot.iter().sum();

    let mut best_t = 0;
    let mut best_val = f64::INFINITY;
    let mut best_dist = usize::MAX;
    for t in s + 1..e {
        let k = t - s;
        let mut cut = 0.0;
        let mut assoc1 = 0.0;
        for i in 0..k {
            cut += row_tot[i] - prefix[i][k];
            assoc1 += row_tot[i];
        }
        let assoc2 = total - assoc1;
        let val = ncut_from_sums(cut, assoc1, assoc2);
        let dist = (2 * t).abs_diff(s + e);
        if val < best_val || (val == best_val && dist < best_dist) {
            best_val = val;
            best_dist = dist;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// Number of target sub-graphs for an `n`-frame sequence:
/// `2^(floor(log2(sqrt(n))) - 1)`, clamped below at 1.
pub fn target_subgraph_count(n: usize) -> usize {
    if n < 2 {
        return 1;
    }
    // floor(log2(sqrt(n))) == floor(floor(log2(n)) / 2) for integer n >= 1.
    let exp = n.ilog2() / 2;
    if exp <= 1 {
        1
    } else {
        1usize << (exp - 1)
    }
}

/// Split every current segment with [`best_cut`], level by level, for
/// `log2(k)` levels. Segments shorter than 2 frames pass through unsplit,
/// so the result may have fewer than `k` segments.
pub fn recursive_partition(a: &Adjacency, k: usize) -> Result<Partition> {
    if k == 0 {
        return Err(TdnError::Contract("target segment count must be >= 1".into()));
    }
    if !k.is_power_of_two() {
        return Err(TdnError::Contract(format!(
            "target segment count must be a power of two, got {k}"
        )));
    }
    let n = a.n();
    let mut segments = vec![(0usize, n)];
    for _ in 0..k.ilog2() {
        let mut next = Vec::with_capacity(segments.len() * 2);
        for &(s, e) in &segments {
            if e - s < 2 {
                next.push((s, e));
            } else {
                let t = best_cut(a, (s, e))?;
                next.push((s, t));
                next.push((t, e));
            }
        }
        segments = next;
    }
    Partition::new(segments, n)
}

/// Zero all cross-segment entries of `a`, keeping in-segment entries
/// bit-unchanged.
pub fn refine_adjacency(a: &Adjacency, p: &Partition) -> Result<Adjacency> {
    let n = a.n();
    if p.num_frames() != n {
        return Err(TdnError::Contract(format!(
            "partition covers {} frames but adjacency has {n}",
            p.num_frames()
        )));
    }
    let mut out = Matrix::zeros(n, n);
    for &(s, e) in p.segments() {
        for i in s..e {
            for j in s..e {
                out.set(i, j, a.matrix().get(i, j));
            }
        }
    }
    Ok(Adjacency(out))
}

/// 0/1 matrix that keeps in-segment entries; used as the structural mask
/// for the differentiable refinement.
pub fn partition_mask(p: &Partition, n: usize) -> Result<Matrix> {
    if p.num_frames() != n {
        return Err(TdnError::Contract(format!(
            "partition covers {} frames but adjacency has {n}",
            p.num_frames()
        )));
    }
    let mut mask = Matrix::zeros(n, n);
    for &(s, e) in p.segments() {
        for i in s..e {
            for j in s..e {
                mask.set(i, j, 1.0);
            }
        }
    }
    Ok(mask)
}

/// Tape-level refinement: mask `a` down to the partition's diagonal blocks.
/// Gradients flow only through the surviving entries.
pub fn refine_adjacency_op(tape: &mut Tape, a: Var, p: &Partition) -> Result<Var> {
    let n = tape.value(a).rows();
    let mask = partition_mask(p, n)?;
    tape.mask(a, mask)
}
