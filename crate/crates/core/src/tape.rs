//! Append-only operation tape for reverse-mode differentiation.
//!
//! A [`Tape`] records every forward op as a node in topological order;
//! [`Tape::backward`] walks the nodes once in reverse, accumulating
//! gradients into the [`ParamStore`] that owns the trainable parameters,
//! then clears the recording. One tape per forward pass; distinct tapes
//! share no state.

use crate::error::{Result, TdnError};
use crate::matrix::{stable_sigmoid, Matrix};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Owns all trainable parameters of a model, in registration order.
///
/// Registration order is the canonical order everywhere: optimizer moments,
/// checkpoint tensors, and gradient reports all follow it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Param { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Weight init: entries uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    /// where fan_in is the row count.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl rand::Rng,
    ) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        self.add(name, m)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::ones(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    /// Replace a parameter value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let cur = &self.params[id.0];
        if cur.value.shape() != value.shape() {
            return Err(TdnError::dim("set_value", cur.value.shape(), value.shape()));
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix) {
        self.params[id.0].grad.add_assign(g);
    }
}

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it,
/// and only until that tape's `backward` clears the recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Matrix plus a 1 x cols row vector broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        /// Per-row standardized values, cached for the backward rule.
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    /// Row-stochastic normalization with identity fallback for near-zero rows.
    RowNormalize {
        a: Var,
        /// 1/degree per row; 0.0 marks a fallback row (treated as constant).
        inv_degree: Vec<f64>,
    },
    /// Elementwise multiply by a constant 0/1 mask.
    Mask { x: Var, keep: Matrix },
    /// One output row per segment: the mean of that segment's input rows.
    SegmentMean { x: Var, segments: Vec<(usize, usize)> },
    Sum(Var),
    /// Mean binary cross-entropy from logits against fixed 0/1 targets.
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Degree threshold below which `row_normalize` falls back to the identity row.
pub const DEGREE_EPS: f64 = 1e-12;

/// Records forward ops and replays them in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        debug_assert!(value.is_finite(), "tape op produced non-finite values");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    /// Snapshot a parameter's current value onto the tape as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(Op::Transpose(x), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// `x + row` with `row` a 1 x x.cols vector added to every row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xm, rm) = (self.value(x), self.value(row));
        if rm.rows() != 1 || rm.cols() != xm.cols() {
            return Err(TdnError::dim("add_row", xm.shape(), rm.shape()));
        }
        let mut out = xm.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + rm.get(0, c));
            }
        }
        Ok(self.push(Op::AddRow(x, row), out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).scale(c);
        self.push(Op::Scale(x, c), value)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    /// Elementwise max(0, v); the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    /// Per-row standardization (population variance, eps-guarded), then
    /// elementwise `gain * v + bias` with 1 x cols gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TdnError::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        let gm = self.value(gain);
        let bm = self.value(bias);
        if gm.shape() != (1, cols) {
            return Err(TdnError::dim("layer_norm gain", xm.shape(), gm.shape()));
        }
        if bm.shape() != (1, cols) {
            return Err(TdnError::dim("layer_norm bias", xm.shape(), bm.shape()));
        }
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                normalized.set(r, c, (row[c] - mean) * is);
            }
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, gm.get(0, c) * normalized.get(r, c) + bm.get(0, c));
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, normalized, inv_std }, out))
    }

    /// Divide each row by its sum; rows with degree < [`DEGREE_EPS`] become
    /// the matching standard-basis row and carry no gradient.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let am = self.value(a);
        let (rows, cols) = am.shape();
        if rows != cols {
            return Err(TdnError::dim("row_normalize", am.shape(), am.shape()));
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_degree = Vec::with_capacity(rows);
        for r in 0..rows {
            let d: f64 = am.row(r).iter().sum();
            if d < DEGREE_EPS {
                inv_degree.push(0.0);
                out.set(r, r, 1.0);
            } else {
                let inv = 1.0 / d;
                inv_degree.push(inv);
                for c in 0..cols {
                    out.set(r, c, am.get(r, c) * inv);
                }
            }
        }
        Ok(self.push(Op::RowNormalize { a, inv_degree }, out))
    }

    /// Structural mask: entries where `keep` is 0 are zeroed and carry no
    /// gradient; surviving entries pass through bit-unchanged.
    pub fn mask(&mut self, x: Var, keep: Matrix) -> Result<Var> {
        let xm = self.value(x);
        if keep.shape() != xm.shape() {
            return Err(TdnError::dim("mask", xm.shape(), keep.shape()));
        }
        let mut out = xm.clone();
        for (v, k) in out.data_mut().iter_mut().zip(keep.data()) {
            if *k == 0.0 {
                *v = 0.0;
            }
        }
        Ok(self.push(Op::Mask { x, keep }, out))
    }

    /// One output row per segment: arithmetic mean of the segment's rows.
    /// Segments must be nonempty, sorted, disjoint and within bounds.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let xm = self.value(x);
        let rows = xm.rows();
        if segments.is_empty() {
            return Err(TdnError::Contract("segment_mean: empty segment list".into()));
        }
        let mut prev_end = 0;
        for &(s, e) in segments {
            if s >= e || e > rows || s < prev_end {
                return Err(TdnError::Contract(format!(
                    "segment_mean: bad segment [{s}, {e}) over {rows} rows"
                )));
            }
            prev_end = e;
        }
        let cols = xm.cols();
        let mut out = Matrix::zeros(segments.len(), cols);
        for (k, &(s, e)) in segments.iter().enumerate() {
            let inv = 1.0 / (e - s) as f64;
            for r in s..e {
                for c in 0..cols {
                    out.set(k, c, out.get(k, c) + xm.get(r, c));
                }
            }
            for c in 0..cols {
                out.set(k, c, out.get(k, c) * inv);
            }
        }
        Ok(self.push(Op::SegmentMean { x, segments: segments.to_vec() }, out))
    }

    /// Mean of all rows, as a single row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let rows = self.value(x).rows();
        self.segment_mean(x, &[(0, rows)]).expect("full segment is always valid")
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Matrix::new(1, 1, vec![total]).unwrap())
    }

    /// Mean over classes of binary cross-entropy between `sigmoid(logit_c)`
    /// and `targets[c]`, in the overflow-free form
    /// `max(z, 0) - z*t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let lm = self.value(logits);
        if lm.rows() != 1 || lm.cols() != targets.len() {
            return Err(TdnError::dim("bce_with_logits", lm.shape(), (1, targets.len())));
        }
        let mut total = 0.0;
        for (c, &t) in targets.iter().enumerate() {
            let z = lm.get(0, c);
            total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        let loss = total / targets.len() as f64;
        Ok(self.push(Op::BceWithLogits { logits, targets }, Matrix::new(1, 1, vec![loss])?))
    }

    /// Reverse pass from a scalar loss node. Accumulates (`+=`) into the
    /// grad of every reachable parameter, then clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let (r, c) = self.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(TdnError::Contract(format!(
                "backward requires a 1x1 loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones(1, 1));

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let bt = self.value(*b).transpose();
                    let ga = g.matmul(&bt).expect("recorded shapes are consistent");
                    let at = self.value(*a).transpose();
                    let gb = at.matmul(&g).expect("recorded shapes are consistent");
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, g.col_sums());
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.scale(*c)),
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(self.value(*b)).unwrap();
                    let gb = g.hadamard(self.value(*a)).unwrap();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let xm = self.value(*x);
                    let mut gx = g;
                    for (gv, xv) in gx.data_mut().iter_mut().zip(xm.data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let s = &self.nodes[idx].value;
                    let mut gx = g;
                    for (gv, sv) in gx.data_mut().iter_mut().zip(s.data()) {
                        *gv *= sv * (1.0 - sv);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                    let (rows, cols) = normalized.shape();
                    let gm = self.value(*gain);
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        // gh = dL/d(normalized row); two row means drive dL/dx.
                        let mut gh = vec![0.0; cols];
                        let mut mean_gh = 0.0;
                        let mut mean_gh_n = 0.0;
                        for c in 0..cols {
                            let gy = g.get(r, c);
                            let n = normalized.get(r, c);
                            gh[c] = gy * gm.get(0, c);
                            mean_gh += gh[c];
                            mean_gh_n += gh[c] * n;
                            ggain.set(0, c, ggain.get(0, c) + gy * n);
                            gbias.set(0, c, gbias.get(0, c) + gy);
                        }
                        mean_gh /= cols as f64;
                        mean_gh_n /= cols as f64;
                        for c in 0..cols {
                            let n = normalized.get(r, c);
                            gx.set(r, c, inv_std[r] * (gh[c] - mean_gh - n * mean_gh_n));
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                }
                Op::RowNormalize { a, inv_degree } => {
                    let out = &self.nodes[idx].value;
                    let (rows, cols) = out.shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let inv = inv_degree[r];
                        if inv == 0.0 {
                            continue; // fallback row is a constant
                        }
                        let dot: f64 =
                            (0..cols).map(|c| g.get(r, c) * out.get(r, c)).sum();
                        for c in 0..cols {
                            ga.set(r, c, inv * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mask { x, keep } => {
                    let mut gx = g;
                    for (gv, k) in gx.data_mut().iter_mut().zip(keep.data()) {
                        if *k == 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentMean { x, segments } => {
                    let xm = self.value(*x);
                    let (rows, cols) = xm.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for (k, &(s, e)) in segments.iter().enumerate() {
                        let inv = 1.0 / (e - s) as f64;
                        for r in s..e {
                            for c in 0..cols {
                                gx.set(r, c, g.get(k, c) * inv);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let xm = self.value(*x);
                    let mut gx = Matrix::ones(xm.rows(), xm.cols());
                    let s = g.get(0, 0);
                    for v in gx.data_mut() {
                        *v *= s;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BceWithLogits { logits, targets } => {
                    let lm = self.value(*logits);
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut gl = Matrix::zeros(1, targets.len());
                    for (c, &t) in targets.iter().enumerate() {
                        gl.set(0, c, scale * (stable_sigmoid(lm.get(0, c)) - t));
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        self.nodes.clear();
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match grads[v.0].as_mut() {
        Some(existing) => existing.add_assign(&g),
        None => grads[v.0] = Some(g),
    }
}

/// `x @ w + b` with `b` broadcast over rows.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw: Var = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}
