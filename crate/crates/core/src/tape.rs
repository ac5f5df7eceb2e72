//! Reverse-mode differentiation tape.
//!
//! Forward evaluation is eager: every operation computes its value
//! immediately and records enough state for the backward sweep. Nodes are
//! appended in topological order, so [`Tape::backward`] is a single reverse
//! iteration. All operations view a tensor as a matrix whose columns are the
//! last axis and whose rows are the flattened leading axes (see
//! [`crate::Tensor::matrix_dims`]); `max_axis` is the exception and honors
//! the full shape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

enum Op<T> {
    Leaf,
    /// a[r,k] · b[k,c]
    MatMul { a: usize, b: usize },
    /// a[r,k] · b[c,k]ᵀ
    MatMulNT { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// a[r,c] + v broadcast over rows (bias add)
    AddRowVec { a: usize, v: usize },
    /// a[r,c] ⊙ v broadcast over rows
    MulRowVec { a: usize, v: usize },
    /// row i of a scaled by s[i]
    ScaleRows { a: usize, s: usize },
    ScaleConst { a: usize, factor: T },
    Sigmoid { a: usize },
    Tanh { a: usize },
    LeakyRelu { a: usize, slope: T },
    /// max over one axis of the full shape; grads route to the first argmax
    MaxAxis { a: usize, argmax: Vec<usize> },
    RowSlice { a: usize, start: usize },
    ReverseRows { a: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    /// per segment (inclusive row range): mean of the rows
    SegmentMeanRows { a: usize, segments: Vec<(usize, usize)> },
    /// w[i,j] = cos(q_i, v_j); norms cached for backward
    CosineRows { q: usize, v: usize, q_norm: Vec<T>, v_norm: Vec<T> },
    Transpose { a: usize },
    SumAll { a: usize },
    /// offsets[P,2] -> clamped refined bounds; `pass` marks where grads flow
    RefineBounds { offsets: usize, pass: Vec<bool> },
    BceLogitsMean { logits: usize, targets: Vec<T> },
    /// Huber (delta=1) on masked rows of pred[P,2], mean over masked rows
    SmoothL1Mean { pred: usize, targets: Vec<T>, mask: Vec<bool> },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Gradients produced by a backward sweep, indexed by [`Var`].
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the loss w.r.t. `var`, or `None` if the loss does not
    /// depend on it.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.slots[var.id].as_deref()
    }

    pub fn tensor(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        match &self.slots[var.id] {
            Some(g) => Tensor::from_vec(shape.to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    validate: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), validate: false }
    }

    /// Checks every produced value for NaN/Inf. Slower; meant for tests and
    /// gradient verification.
    pub fn with_validation() -> Self {
        Self { nodes: Vec::new(), validate: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.id].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.id].value.shape()
    }

    fn dims(&self, var: Var) -> (usize, usize) {
        self.nodes[var.id].value.matrix_dims()
    }

    fn data(&self, var: Var) -> &[T] {
        self.nodes[var.id].value.data()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if self.validate {
            value.check_finite("tape")?;
        }
        self.nodes.push(Node { op, value });
        Ok(Var { id: self.nodes.len() - 1 })
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var { id: self.nodes.len() - 1 }
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.leaf(Tensor::zeros(shape))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != ca {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let cb = bs[1];
        let mut out = vec![T::zero(); ra * cb];
        mat_mul_acc(self.data(a), self.data(b), ra, ca, cb, &mut out);
        let mut shape: Vec<usize> = self.shape(a)[..self.shape(a).len().saturating_sub(1)].to_vec();
        if self.shape(a).is_empty() {
            shape.clear();
        }
        shape.push(cb);
        self.push(Op::MatMul { a: a.id, b: b.id }, Tensor::from_vec(shape, out)?)
    }

    /// a · bᵀ where `b` rows are the candidates: out[i,j] = ⟨a_i, b_j⟩.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if cb != ca {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![T::zero(); ra * rb];
        mat_mul_nt_acc(self.data(a), self.data(b), ra, ca, rb, &mut out);
        self.push(Op::MatMulNT { a: a.id, b: b.id }, Tensor::from_vec(vec![ra, rb], out)?)
    }

    fn elementwise_pair(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(CoreError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("add", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(Op::Add { a: a.id, b: b.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("sub", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push(Op::Sub { a: a.id, b: b.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("mul", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul { a: a.id, b: b.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (rv, cv) = self.dims(v);
        if rv != 1 || cv != c {
            return Err(CoreError::ShapeMismatch {
                op: "add_row_vec",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        let vd = self.data(v);
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + vd[j];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::AddRowVec { a: a.id, v: v.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn mul_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (rv, cv) = self.dims(v);
        if rv != 1 || cv != c {
            return Err(CoreError::ShapeMismatch {
                op: "mul_row_vec",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        let vd = self.data(v);
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] * vd[j];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::MulRowVec { a: a.id, v: v.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.nodes[s.id].value.numel() != r {
            return Err(CoreError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        let sd = self.data(s);
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] * sd[i];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::ScaleRows { a: a.id, s: s.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn scale_const(&mut self, a: Var, factor: T) -> Result<Var> {
        let value = self.nodes[a.id].value.map(|x| x * factor);
        self.push(Op::ScaleConst { a: a.id, factor }, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.id].value.map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(Op::Sigmoid { a: a.id }, value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.id].value.map(|x| x.tanh());
        self.push(Op::Tanh { a: a.id }, value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let value = self.nodes[a.id].value.map(|x| if x >= T::zero() { x } else { x * slope });
        self.push(Op::LeakyRelu { a: a.id, slope }, value)
    }

    /// Maximum over `axis` of the full shape; the axis is removed from the
    /// output shape. Subgradient routes to the first argmax in scan order.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(CoreError::InvalidArgument {
                op: "max_axis",
                detail: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let axis_len = shape[axis];
        if axis_len == 0 {
            return Err(CoreError::InvalidArgument {
                op: "max_axis",
                detail: format!("axis {axis} of shape {shape:?} is empty"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = self.data(a);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best_idx = (o * axis_len) * inner + i;
                let mut best = data[best_idx];
                for j in 1..axis_len {
                    let idx = (o * axis_len + j) * inner + i;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.push(Op::MaxAxis { a: a.id, argmax }, Tensor::from_vec(out_shape, out)?)
    }

    pub fn row_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(CoreError::InvalidArgument {
                op: "row_slice",
                detail: format!("rows {start}..{} out of range for {r} rows", start + len),
            });
        }
        let data = self.data(a)[start * c..(start + len) * c].to_vec();
        self.push(Op::RowSlice { a: a.id, start }, Tensor::from_vec(vec![len, c], data)?)
    }

    /// Reverse the row order (frame reversal).
    pub fn reverse_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let src = self.data(a);
        let mut data = Vec::with_capacity(r * c);
        for i in (0..r).rev() {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::ReverseRows { a: a.id }, Tensor::from_vec(shape, data)?)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArgument {
                op: "concat_rows",
                detail: "no parts".into(),
            });
        }
        let (_, c0) = self.dims(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != c0 {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.data(p));
        }
        self.push(
            Op::ConcatRows { parts: parts.iter().map(|v| v.id).collect() },
            Tensor::from_vec(vec![rows, c0], data)?,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArgument {
                op: "concat_cols",
                detail: "no parts".into(),
            });
        }
        let (r0, _) = self.dims(parts[0]);
        let mut total_c = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != r0 {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total_c += c;
        }
        let mut data = Vec::with_capacity(r0 * total_c);
        for i in 0..r0 {
            for &p in parts {
                let (_, c) = self.dims(p);
                let pd = self.data(p);
                data.extend_from_slice(&pd[i * c..(i + 1) * c]);
            }
        }
        self.push(
            Op::ConcatCols { parts: parts.iter().map(|v| v.id).collect() },
            Tensor::from_vec(vec![r0, total_c], data)?,
        )
    }

    /// Mean of the rows in each inclusive `(start, end)` range.
    pub fn segment_mean_rows(&mut self, a: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let (r, c) = self.dims(a);
        let data = self.data(a);
        let mut out = Vec::with_capacity(segments.len() * c);
        for &(s, e) in segments {
            if s > e || e >= r {
                return Err(CoreError::InvalidArgument {
                    op: "segment_mean_rows",
                    detail: format!("segment ({s},{e}) out of range for {r} rows"),
                });
            }
            let len = T::from_f64((e - s + 1) as f64);
            for j in 0..c {
                let mut acc = T::zero();
                for i in s..=e {
                    acc = acc + data[i * c + j];
                }
                out.push(acc / len);
            }
        }
        self.push(
            Op::SegmentMeanRows { a: a.id, segments: segments.to_vec() },
            Tensor::from_vec(vec![segments.len(), c], out)?,
        )
    }

    /// Pairwise cosine similarity between the rows of `q` and the rows of
    /// `v`: out[i,j] = ⟨q_i, v_j⟩ / (‖q_i‖‖v_j‖). Errors on any zero-norm
    /// row, naming it.
    pub fn cosine_rows(&mut self, q: Var, v: Var) -> Result<Var> {
        let (nq, cq) = self.dims(q);
        let (nv, cv) = self.dims(v);
        if cq != cv {
            return Err(CoreError::ShapeMismatch {
                op: "cosine_rows",
                lhs: self.shape(q).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let qd = self.data(q);
        let vd = self.data(v);
        let q_norm = row_norms(qd, nq, cq);
        let v_norm = row_norms(vd, nv, cv);
        for (i, n) in q_norm.iter().enumerate() {
            if *n == T::zero() {
                return Err(CoreError::ZeroNorm { op: "cosine_rows (query side)", row: i });
            }
        }
        for (j, n) in v_norm.iter().enumerate() {
            if *n == T::zero() {
                return Err(CoreError::ZeroNorm { op: "cosine_rows (candidate side)", row: j });
            }
        }
        let mut out = Vec::with_capacity(nq * nv);
        for i in 0..nq {
            for j in 0..nv {
                let mut dot = T::zero();
                for a in 0..cq {
                    dot = dot + qd[i * cq + a] * vd[j * cq + a];
                }
                out.push(dot / (q_norm[i] * v_norm[j]));
            }
        }
        self.push(
            Op::CosineRows { q: q.id, v: v.id, q_norm, v_norm },
            Tensor::from_vec(vec![nq, nv], out)?,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let data = self.data(a);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(data[i * c + j]);
            }
        }
        self.push(Op::Transpose { a: a.id }, Tensor::from_vec(vec![c, r], out)?)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut acc = T::zero();
        for &x in self.data(a) {
            acc = acc + x;
        }
        self.push(Op::SumAll { a: a.id }, Tensor::scalar(acc))
    }

    /// Boundary refinement: `offsets[p] = (δs, δe)` shifts proposal `p`,
    /// clamped into `[0, m-1]`. If the shifted bounds no longer satisfy
    /// start < end, the proposal collapses back to its unrefined bounds and
    /// no gradient flows for it.
    pub fn refine_bounds(
        &mut self,
        offsets: Var,
        proposals: &[(usize, usize)],
        m: usize,
    ) -> Result<Var> {
        let (p, c) = self.dims(offsets);
        if c != 2 || p != proposals.len() {
            return Err(CoreError::ShapeMismatch {
                op: "refine_bounds",
                lhs: self.shape(offsets).to_vec(),
                rhs: vec![proposals.len(), 2],
            });
        }
        let hi = T::from_f64((m - 1) as f64);
        let od = self.data(offsets);
        let mut out = Vec::with_capacity(p * 2);
        let mut pass = vec![false; p * 2];
        for (i, &(s, e)) in proposals.iter().enumerate() {
            let s_t = T::from_f64(s as f64);
            let e_t = T::from_f64(e as f64);
            let rs_raw = s_t + od[i * 2];
            let re_raw = e_t + od[i * 2 + 1];
            let rs = rs_raw.max(T::zero()).min(hi);
            let re = re_raw.max(T::zero()).min(hi);
            if rs < re {
                pass[i * 2] = rs_raw > T::zero() && rs_raw < hi;
                pass[i * 2 + 1] = re_raw > T::zero() && re_raw < hi;
                out.push(rs);
                out.push(re);
            } else {
                out.push(s_t);
                out.push(e_t);
            }
        }
        self.push(
            Op::RefineBounds { offsets: offsets.id, pass },
            Tensor::from_vec(vec![p, 2], out)?,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against soft targets,
    /// computed from logits for stability.
    pub fn bce_logits_mean(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let n = self.nodes[logits.id].value.numel();
        if n != targets.len() || n == 0 {
            return Err(CoreError::InvalidArgument {
                op: "bce_logits_mean",
                detail: format!("{n} logits vs {} targets", targets.len()),
            });
        }
        let ld = self.data(logits);
        let mut acc = T::zero();
        for (l, y) in ld.iter().zip(targets) {
            acc = acc + *y * softplus(-*l) + (T::one() - *y) * softplus(*l);
        }
        let mean = acc / T::from_f64(n as f64);
        self.push(
            Op::BceLogitsMean { logits: logits.id, targets: targets.to_vec() },
            Tensor::scalar(mean),
        )
    }

    /// Smooth-L1 (Huber, delta = 1) of `pred[P,2]` against `targets`,
    /// summed per masked row and averaged over masked rows. Empty masks
    /// yield zero.
    pub fn smooth_l1_mean(&mut self, pred: Var, targets: &[T], mask: &[bool]) -> Result<Var> {
        let (p, c) = self.dims(pred);
        if c != 2 || targets.len() != p * 2 || mask.len() != p {
            return Err(CoreError::InvalidArgument {
                op: "smooth_l1_mean",
                detail: format!("pred ({p},{c}), {} targets, {} mask", targets.len(), mask.len()),
            });
        }
        let pd = self.data(pred);
        let n_pos = mask.iter().filter(|m| **m).count().max(1);
        let denom = T::from_f64(n_pos as f64);
        let mut acc = T::zero();
        for i in 0..p {
            if !mask[i] {
                continue;
            }
            for j in 0..2 {
                let d = pd[i * 2 + j] - targets[i * 2 + j];
                acc = acc + huber(d);
            }
        }
        self.push(
            Op::SmoothL1Mean { pred: pred.id, targets: targets.to_vec(), mask: mask.to_vec() },
            Tensor::scalar(acc / denom),
        )
    }

    /// Reverse sweep from a scalar loss. Errors if the loss is not a finite
    /// scalar.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lt = &self.nodes[loss.id].value;
        if lt.numel() != 1 {
            return Err(CoreError::InvalidArgument {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", lt.shape()),
            });
        }
        lt.check_finite("backward")?;
        let mut slots: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        slots[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = slots[id].take() else { continue };
            self.accumulate(id, &g, &mut slots);
            slots[id] = Some(g);
        }
        Ok(Grads { slots })
    }

    fn grad_slot<'s>(&self, slots: &'s mut [Option<Vec<T>>], id: usize) -> &'s mut Vec<T> {
        let n = self.nodes[id].value.numel();
        slots[id].get_or_insert_with(|| vec![T::zero(); n])
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, id: usize, g: &[T], slots: &mut [Option<Vec<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ra, ka) = self.nodes[*a].value.matrix_dims();
                let cb = self.nodes[*b].value.shape()[1];
                let bd = self.nodes[*b].value.data();
                mat_mul_nt_acc(g, bd, ra, cb, ka, self.grad_slot(slots, *a));
                let ad = self.nodes[*a].value.data();
                mat_mul_tn_acc(ad, g, ra, ka, cb, self.grad_slot(slots, *b));
            }
            Op::MatMulNT { a, b } => {
                let (ra, ka) = self.nodes[*a].value.matrix_dims();
                let (rb, _) = self.nodes[*b].value.matrix_dims();
                let bd = self.nodes[*b].value.data();
                mat_mul_acc(g, bd, ra, rb, ka, self.grad_slot(slots, *a));
                let ad = self.nodes[*a].value.data();
                mat_mul_tn_acc(g, ad, ra, rb, ka, self.grad_slot(slots, *b));
            }
            Op::Add { a, b } => {
                add_into(self.grad_slot(slots, *a), g);
                add_into(self.grad_slot(slots, *b), g);
            }
            Op::Sub { a, b } => {
                add_into(self.grad_slot(slots, *a), g);
                let gb = self.grad_slot(slots, *b);
                for (s, x) in gb.iter_mut().zip(g) {
                    *s = *s - *x;
                }
            }
            Op::Mul { a, b } => {
                let bd = self.nodes[*b].value.data();
                let ga = self.grad_slot(slots, *a);
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * bd[i];
                }
                let ad = self.nodes[*a].value.data();
                let gb = self.grad_slot(slots, *b);
                for i in 0..g.len() {
                    gb[i] = gb[i] + g[i] * ad[i];
                }
            }
            Op::AddRowVec { a, v } => {
                let (r, c) = self.nodes[*a].value.matrix_dims();
                add_into(self.grad_slot(slots, *a), g);
                let gv = self.grad_slot(slots, *v);
                for i in 0..r {
                    for j in 0..c {
                        gv[j] = gv[j] + g[i * c + j];
                    }
                }
            }
            Op::MulRowVec { a, v } => {
                let (r, c) = self.nodes[*a].value.matrix_dims();
                let vd = self.nodes[*v].value.data();
                let ga = self.grad_slot(slots, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + g[i * c + j] * vd[j];
                    }
                }
                let ad = self.nodes[*a].value.data();
                let gv = self.grad_slot(slots, *v);
                for i in 0..r {
                    for j in 0..c {
                        gv[j] = gv[j] + g[i * c + j] * ad[i * c + j];
                    }
                }
            }
            Op::ScaleRows { a, s } => {
                let (r, c) = self.nodes[*a].value.matrix_dims();
                let sd = self.nodes[*s].value.data();
                let ga = self.grad_slot(slots, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + g[i * c + j] * sd[i];
                    }
                }
                let ad = self.nodes[*a].value.data();
                let gs = self.grad_slot(slots, *s);
                for i in 0..r {
                    let mut acc = T::zero();
                    for j in 0..c {
                        acc = acc + g[i * c + j] * ad[i * c + j];
                    }
                    gs[i] = gs[i] + acc;
                }
            }
            Op::ScaleConst { a, factor } => {
                let f = *factor;
                let ga = self.grad_slot(slots, *a);
                for (s, x) in ga.iter_mut().zip(g) {
                    *s = *s + *x * f;
                }
            }
            Op::Sigmoid { a } => {
                let yd = self.nodes[id].value.data();
                let ga = self.grad_slot(slots, *a);
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * yd[i] * (T::one() - yd[i]);
                }
            }
            Op::Tanh { a } => {
                let yd = self.nodes[id].value.data();
                let ga = self.grad_slot(slots, *a);
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * (T::one() - yd[i] * yd[i]);
                }
            }
            Op::LeakyRelu { a, slope } => {
                let sl = *slope;
                let xd = self.nodes[*a].value.data();
                let ga = self.grad_slot(slots, *a);
                for i in 0..g.len() {
                    let d = if xd[i] >= T::zero() { T::one() } else { sl };
                    ga[i] = ga[i] + g[i] * d;
                }
            }
            Op::MaxAxis { a, argmax } => {
                let ga = self.grad_slot(slots, *a);
                for (out_idx, &src_idx) in argmax.iter().enumerate() {
                    ga[src_idx] = ga[src_idx] + g[out_idx];
                }
            }
            Op::RowSlice { a, start } => {
                let (_, c) = self.nodes[*a].value.matrix_dims();
                let ga = self.grad_slot(slots, *a);
                for (i, x) in g.iter().enumerate() {
                    ga[start * c + i] = ga[start * c + i] + *x;
                }
            }
            Op::ReverseRows { a } => {
                let (r, c) = self.nodes[*a].value.matrix_dims();
                let ga = self.grad_slot(slots, *a);
                for i in 0..r {
                    let src = &g[(r - 1 - i) * c..(r - i) * c];
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + src[j];
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.numel();
                    let gp = self.grad_slot(slots, p);
                    add_into(gp, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let (rows, total_c) = self.nodes[id].value.matrix_dims();
                let mut col_offset = 0;
                for &p in parts {
                    let (_, c) = self.nodes[p].value.matrix_dims();
                    let gp = self.grad_slot(slots, p);
                    for i in 0..rows {
                        for j in 0..c {
                            gp[i * c + j] = gp[i * c + j] + g[i * total_c + col_offset + j];
                        }
                    }
                    col_offset += c;
                }
            }
            Op::SegmentMeanRows { a, segments } => {
                let (_, c) = self.nodes[*a].value.matrix_dims();
                let ga = self.grad_slot(slots, *a);
                for (p, &(s, e)) in segments.iter().enumerate() {
                    let inv = T::one() / T::from_f64((e - s + 1) as f64);
                    for i in s..=e {
                        for j in 0..c {
                            ga[i * c + j] = ga[i * c + j] + g[p * c + j] * inv;
                        }
                    }
                }
            }
            Op::CosineRows { q, v, q_norm, v_norm } => {
                let (nq, d) = self.nodes[*q].value.matrix_dims();
                let (nv, _) = self.nodes[*v].value.matrix_dims();
                let qd = self.nodes[*q].value.data();
                let vd = self.nodes[*v].value.data();
                let w = self.nodes[id].value.data();
                {
                    let gq = self.grad_slot(slots, *q);
                    for i in 0..nq {
                        for j in 0..nv {
                            let gij = g[i * nv + j];
                            if gij == T::zero() {
                                continue;
                            }
                            let inv = T::one() / (q_norm[i] * v_norm[j]);
                            let wq = w[i * nv + j] / (q_norm[i] * q_norm[i]);
                            for a in 0..d {
                                gq[i * d + a] =
                                    gq[i * d + a] + gij * (vd[j * d + a] * inv - wq * qd[i * d + a]);
                            }
                        }
                    }
                }
                {
                    let gv = self.grad_slot(slots, *v);
                    for i in 0..nq {
                        for j in 0..nv {
                            let gij = g[i * nv + j];
                            if gij == T::zero() {
                                continue;
                            }
                            let inv = T::one() / (q_norm[i] * v_norm[j]);
                            let wv = w[i * nv + j] / (v_norm[j] * v_norm[j]);
                            for a in 0..d {
                                gv[j * d + a] =
                                    gv[j * d + a] + gij * (qd[i * d + a] * inv - wv * vd[j * d + a]);
                            }
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                let (r, c) = self.nodes[*a].value.matrix_dims();
                let ga = self.grad_slot(slots, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + g[j * r + i];
                    }
                }
            }
            Op::SumAll { a } => {
                let ga = self.grad_slot(slots, *a);
                for s in ga.iter_mut() {
                    *s = *s + g[0];
                }
            }
            Op::RefineBounds { offsets, pass } => {
                let go = self.grad_slot(slots, *offsets);
                for (i, &ok) in pass.iter().enumerate() {
                    if ok {
                        go[i] = go[i] + g[i];
                    }
                }
            }
            Op::BceLogitsMean { logits, targets } => {
                let ld = self.nodes[*logits].value.data();
                let inv_n = T::one() / T::from_f64(targets.len() as f64);
                let gl = self.grad_slot(slots, *logits);
                for i in 0..targets.len() {
                    let s = T::one() / (T::one() + (-ld[i]).exp());
                    gl[i] = gl[i] + g[0] * (s - targets[i]) * inv_n;
                }
            }
            Op::SmoothL1Mean { pred, targets, mask } => {
                let pd = self.nodes[*pred].value.data();
                let n_pos = mask.iter().filter(|m| **m).count().max(1);
                let inv = T::one() / T::from_f64(n_pos as f64);
                let gp = self.grad_slot(slots, *pred);
                for i in 0..mask.len() {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..2 {
                        let d = pd[i * 2 + j] - targets[i * 2 + j];
                        let slope = d.max(-T::one()).min(T::one());
                        gp[i * 2 + j] = gp[i * 2 + j] + g[0] * slope * inv;
                    }
                }
            }
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    for (s, x) in acc.iter_mut().zip(g) {
        *s = *s + *x;
    }
}

fn row_norms<T: Real>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..rows)
        .map(|i| {
            let mut acc = T::zero();
            for j in 0..cols {
                let x = data[i * cols + j];
                acc = acc + x * x;
            }
            acc.sqrt()
        })
        .collect()
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

fn huber<T: Real>(d: T) -> T {
    let half = T::from_f64(0.5);
    if d.abs() < T::one() {
        half * d * d
    } else {
        d.abs() - half
    }
}

/// out += a[r,k] · b[k,c]
pub(crate) fn mat_mul_acc<T: Real>(a: &[T], b: &[T], r: usize, k: usize, c: usize, out: &mut [T]) {
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * c..(kk + 1) * c];
            for j in 0..c {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// out += a[r,k] · b[c,k]ᵀ  (dot products of rows)
fn mat_mul_nt_acc<T: Real>(a: &[T], b: &[T], r: usize, k: usize, c: usize, out: &mut [T]) {
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for kk in 0..k {
                acc = acc + arow[kk] * brow[kk];
            }
            out[i * c + j] = out[i * c + j] + acc;
        }
    }
}

/// out += a[r,k]ᵀ · g[r,c]
fn mat_mul_tn_acc<T: Real>(a: &[T], g: &[T], r: usize, k: usize, c: usize, out: &mut [T]) {
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * c..(i + 1) * c];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * c..(kk + 1) * c];
            for j in 0..c {
                orow[j] = orow[j] + av * grow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_forward() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 2]));
        match tape.matmul(a, b) {
            Err(CoreError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matmul_backward_matches_hand_derivation() {
        // loss = sum(A·B), dA = 1·Bᵀ, dB = Aᵀ·1
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let y = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(grads.get(b).unwrap(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[0.0]));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn leaky_relu_negative_side() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[-1.0, 2.0]));
        let y = tape.leaky_relu(x, 0.01).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn max_axis_over_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 2], &[1.0, -0.01, 0.0, 2.0, -0.03, 0.0]));
        let y = tape.max_axis(x, 0).unwrap();
        assert_eq!(tape.shape(y), &[2]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn max_axis_single_element_axis_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[4.0, 5.0, 6.0]));
        let y = tape.max_axis(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn max_axis_grad_routes_to_first_argmax() {
        let mut tape = Tape::new();
        // tie in column 0: grad goes to the first row
        let x = tape.leaf(t(&[2, 2], &[3.0, 1.0, 3.0, 2.0]));
        let y = tape.max_axis(x, 0).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_axis_rejects_empty_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[0, 2]));
        assert!(tape.max_axis(x, 0).is_err());
    }

    #[test]
    fn cosine_rows_basics() {
        let mut tape = Tape::new();
        let q = tape.leaf(t(&[1, 2], &[1.0, 0.0]));
        let v = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let w = tape.cosine_rows(q, v).unwrap();
        assert_eq!(tape.value(w).data(), &[1.0, 0.0]);
    }

    #[test]
    fn cosine_rows_zero_norm_names_row() {
        let mut tape = Tape::new();
        let q = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let v = tape.leaf(t(&[1, 2], &[1.0, 0.0]));
        match tape.cosine_rows(q, v) {
            Err(CoreError::ZeroNorm { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn reverse_rows_involution() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let y = tape.reverse_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 2.0, 1.0]);
        let z = tape.reverse_rows(y).unwrap();
        assert_eq!(tape.value(z).data(), tape.value(x).data());
    }

    #[test]
    fn segment_mean_rows_means() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4, 1], &[1.0, 3.0, 5.0, 7.0]));
        let y = tape.segment_mean_rows(x, &[(0, 1), (0, 3)]).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0]);
    }

    #[test]
    fn refine_bounds_clamps_and_collapses() {
        let mut tape = Tape::new();
        // proposal (2, 5) with offsets (-10, +1): start clamps to 0
        // proposal (3, 4) with offsets (+2, -2): inverted -> collapse
        let off = tape.leaf(t(&[2, 2], &[-10.0, 1.0, 2.0, -2.0]));
        let r = tape.refine_bounds(off, &[(2, 5), (3, 4)], 8).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 6.0, 3.0, 4.0]);
    }

    #[test]
    fn bce_of_half_against_one() {
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 1], &[0.0]));
        let loss = tape.bce_logits_mean(logits, &[1.0]).unwrap();
        let got = tape.value(loss).data()[0];
        assert!((got - 0.5f64.ln().abs()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(f64::NAN));
        assert!(tape.backward(x).is_err());
    }
}
