//! Operation-recording graph with reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value and the ids of
//! its inputs; `backward` replays the record in reverse computing
//! vector-Jacobian products. One graph is single-threaded; independent
//! graphs may run on independent threads.
//!
//! All arithmetic runs through f64 internally (reductions and matmul inner
//! products accumulate in f64), outputs are rounded to the storage type
//! once per op. Every op output is scanned for NaN/Inf and surfaced as an
//! error rather than stored.

use super::element::{Element, MASK_THRESHOLD};
use super::tensor::{
    broadcast_shape, broadcast_strides, contiguous_strides, reduce_to_shape, Tensor,
};
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Silu { x: TensorId },
    Gelu { x: TensorId },
    Sqrt { x: TensorId },
    Scale { x: TensorId, c: f64 },
    AddConst { x: TensorId },
    Reshape { x: TensorId },
    Permute { x: TensorId, perm: Vec<usize> },
    Concat { xs: Vec<TensorId>, axis: usize },
    Narrow { x: TensorId, axis: usize, start: usize, len: usize },
    Sum { x: TensorId, axes: Vec<usize> },
    Mean { x: TensorId, axes: Vec<usize> },
    Var { x: TensorId, axes: Vec<usize> },
    Softmax { x: TensorId },
    GatherRows { table: TensorId, indices: Vec<usize> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient with respect to the given node; zeros were never touched.
    pub fn wrt(&self, id: TensorId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Recording graph. See module docs.
pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
    live_bytes: usize,
    peak_bytes: usize,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), live_bytes: 0, peak_bytes: 0 }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Best-effort scratch accounting: peak bytes held by node values.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Register an input; gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: Tensor<E>) -> TensorId {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Register an input that never receives gradients.
    pub fn constant(&mut self, t: Tensor<E>) -> TensorId {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> TensorId {
        self.live_bytes += value.numel() * std::mem::size_of::<E>();
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
        self.nodes.push(Node { value, op, needs_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn finish(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[TensorId],
    ) -> Result<TensorId, NumericsError> {
        let mut out = Vec::with_capacity(data.len());
        for v in &data {
            let e = E::from_f64(*v);
            if !e.is_finite_val() {
                return Err(NumericsError::NonFinite { op: op_name });
            }
            out.push(e);
        }
        let needs = self.needs(inputs);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, op, needs))
    }

    // ---- elementwise with broadcasting -------------------------------------

    fn binop(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<TensorId, NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| NumericsError::ShapeMismatch {
            op: op_name,
            details: format!("{sa:?} vs {sb:?}"),
        })?;
        let da = self.value(a).data();
        let db = self.value(b).data();
        let n: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(n);
        if sa == sb {
            for i in 0..n {
                out.push(f(da[i].to_f64(), db[i].to_f64()));
            }
        } else {
            let (sta, stb) = (
                broadcast_strides(sa, &out_shape),
                broadcast_strides(sb, &out_shape),
            );
            let mut idx = vec![0usize; out_shape.len()];
            let (mut oa, mut ob) = (0usize, 0usize);
            for _ in 0..n {
                out.push(f(da[oa].to_f64(), db[ob].to_f64()));
                for d in (0..out_shape.len()).rev() {
                    idx[d] += 1;
                    oa += sta[d];
                    ob += stb[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                    oa -= sta[d] * out_shape[d];
                    ob -= stb[d] * out_shape[d];
                }
            }
        }
        self.finish(op_name, out_shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binop("add", a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binop("sub", a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binop("mul", a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binop("div", a, b, Op::Div { a, b }, |x, y| x / y)
    }

    // ---- unary -------------------------------------------------------------

    fn unop(
        &mut self,
        op_name: &'static str,
        x: TensorId,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<TensorId, NumericsError> {
        let shape = self.value(x).shape().to_vec();
        let data: Vec<f64> = self.value(x).data().iter().map(|v| f(v.to_f64())).collect();
        self.finish(op_name, shape, data, op, &[x])
    }

    pub fn silu(&mut self, x: TensorId) -> Result<TensorId, NumericsError> {
        self.unop("silu", x, Op::Silu { x }, |v| v * sigmoid(v))
    }

    /// GeLU, tanh approximation:
    /// 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId, NumericsError> {
        self.unop("gelu", x, Op::Gelu { x }, gelu_tanh)
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId, NumericsError> {
        self.unop("sqrt", x, Op::Sqrt { x }, f64::sqrt)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId, NumericsError> {
        self.unop("scale", x, Op::Scale { x, c }, |v| v * c)
    }

    pub fn add_const(&mut self, x: TensorId, c: f64) -> Result<TensorId, NumericsError> {
        self.unop("add_const", x, Op::AddConst { x }, |v| v + c)
    }

    // ---- shape -------------------------------------------------------------

    /// Pure metadata change; data is carried over bit-identically.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, NumericsError> {
        let v = self.value(x);
        let expect: usize = shape.iter().product();
        if expect != v.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                details: format!("{:?} -> {:?}", v.shape(), shape),
            });
        }
        let t = Tensor::new(shape, v.data().to_vec())?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape { x }, needs))
    }

    /// Axis permutation; values are copied verbatim (no arithmetic).
    pub fn permute(&mut self, x: TensorId, perm: &[usize]) -> Result<TensorId, NumericsError> {
        let v = self.value(x);
        let rank = v.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(NumericsError::ShapeMismatch {
                op: "permute",
                details: format!("perm {:?} for rank {}", perm, rank),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| v.shape()[p]).collect();
        let in_strides = contiguous_strides(v.shape());
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let data = v.data();
        let n = v.numel();
        let mut out = vec![E::ZERO; n];
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for slot in out.iter_mut() {
            *slot = data[src];
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += src_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
                src -= src_strides[d] * out_shape[d];
            }
        }
        let t = Tensor::new(out_shape, out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Permute { x, perm: perm.to_vec() }, needs))
    }

    pub fn concat(&mut self, xs: &[TensorId], axis: usize) -> Result<TensorId, NumericsError> {
        if xs.is_empty() {
            return Err(NumericsError::ShapeMismatch { op: "concat", details: "empty input list".into() });
        }
        let base = self.value(xs[0]).shape().to_vec();
        if axis >= base.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "concat",
                details: format!("axis {axis} for rank {}", base.len()),
            });
        }
        let mut axis_total = 0usize;
        for &id in xs {
            let s = self.value(id).shape();
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    details: format!("{s:?} vs {base:?} along axis {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = vec![E::ZERO; out_shape.iter().product()];
        let row = axis_total * inner;
        let mut write_off = 0usize;
        for &id in xs {
            let v = self.value(id);
            let len = v.shape()[axis];
            let data = v.data();
            for o in 0..outer {
                let src = o * len * inner;
                let dst = o * row + write_off;
                out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
            }
            write_off += len * inner;
        }
        let t = Tensor::new(out_shape, out)?;
        let needs = self.needs(xs);
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }, needs))
    }

    /// Contiguous slice `[start, start+len)` along one axis.
    pub fn narrow(
        &mut self,
        x: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<TensorId, NumericsError> {
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(NumericsError::ShapeMismatch {
                op: "narrow",
                details: format!("axis {axis} range {start}..{} of {:?}", start + len, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut out = vec![E::ZERO; outer * len * inner];
        let data = v.data();
        for o in 0..outer {
            let src = (o * shape[axis] + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        let t = Tensor::new(out_shape, out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Narrow { x, axis, start, len }, needs))
    }

    /// Split along an axis into consecutive pieces of the given sizes.
    pub fn split(
        &mut self,
        x: TensorId,
        axis: usize,
        sizes: &[usize],
    ) -> Result<Vec<TensorId>, NumericsError> {
        let total: usize = sizes.iter().sum();
        let extent = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| NumericsError::ShapeMismatch {
                op: "split",
                details: format!("axis {axis} out of range"),
            })?;
        if total != extent {
            return Err(NumericsError::ShapeMismatch {
                op: "split",
                details: format!("sizes sum {total} != extent {extent}"),
            });
        }
        let mut parts = Vec::with_capacity(sizes.len());
        let mut start = 0usize;
        for &len in sizes {
            parts.push(self.narrow(x, axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    // ---- reductions ----------------------------------------------------------

    fn reduce_setup(
        &self,
        op_name: &'static str,
        x: TensorId,
        axes: &[usize],
        keepdim: bool,
    ) -> Result<(Vec<usize>, Vec<usize>, usize), NumericsError> {
        let shape = self.value(x).shape();
        let mut is_reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() || is_reduced[a] {
                return Err(NumericsError::ShapeMismatch {
                    op: op_name,
                    details: format!("axes {axes:?} for shape {shape:?}"),
                });
            }
            is_reduced[a] = true;
        }
        let mut out_shape = Vec::new();
        for (d, &extent) in shape.iter().enumerate() {
            if is_reduced[d] {
                if keepdim {
                    out_shape.push(1);
                }
            } else {
                out_shape.push(extent);
            }
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        // map: for each input element, the flat output index (stride 0 on reduced axes)
        let mut kept = shape.to_vec();
        for &a in axes {
            kept[a] = 1;
        }
        let map_strides = broadcast_strides(&kept, shape);
        Ok((out_shape, map_strides, count))
    }

    fn reduce_accumulate(&self, x: TensorId, map_strides: &[usize], out_len: usize) -> Vec<f64> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let mut acc = vec![0.0f64; out_len];
        let mut idx = vec![0usize; shape.len()];
        let mut off = 0usize;
        for e in v.data() {
            acc[off] += e.to_f64();
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                off += map_strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
                off -= map_strides[d] * shape[d];
            }
        }
        acc
    }

    pub fn sum(&mut self, x: TensorId, axes: &[usize], keepdim: bool) -> Result<TensorId, NumericsError> {
        let (out_shape, map, _) = self.reduce_setup("sum", x, axes, keepdim)?;
        let out_len = out_shape.iter().product();
        let acc = self.reduce_accumulate(x, &map, out_len);
        self.finish("sum", out_shape, acc, Op::Sum { x, axes: axes.to_vec() }, &[x])
    }

    pub fn mean(&mut self, x: TensorId, axes: &[usize], keepdim: bool) -> Result<TensorId, NumericsError> {
        let (out_shape, map, count) = self.reduce_setup("mean", x, axes, keepdim)?;
        let out_len = out_shape.iter().product();
        let mut acc = self.reduce_accumulate(x, &map, out_len);
        for a in acc.iter_mut() {
            *a /= count as f64;
        }
        self.finish("mean", out_shape, acc, Op::Mean { x, axes: axes.to_vec() }, &[x])
    }

    /// Population variance (no Bessel correction) over the given axes.
    pub fn var(&mut self, x: TensorId, axes: &[usize], keepdim: bool) -> Result<TensorId, NumericsError> {
        let (out_shape, map, count) = self.reduce_setup("var", x, axes, keepdim)?;
        let out_len = out_shape.iter().product();
        let mut means = self.reduce_accumulate(x, &map, out_len);
        for m in means.iter_mut() {
            *m /= count as f64;
        }
        // second pass for centered squares
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let mut acc = vec![0.0f64; out_len];
        let mut idx = vec![0usize; shape.len()];
        let mut off = 0usize;
        for e in v.data() {
            let d = e.to_f64() - means[off];
            acc[off] += d * d;
            for dd in (0..shape.len()).rev() {
                idx[dd] += 1;
                off += map[dd];
                if idx[dd] < shape[dd] {
                    break;
                }
                idx[dd] = 0;
                off -= map[dd] * shape[dd];
            }
        }
        for a in acc.iter_mut() {
            *a /= count as f64;
        }
        self.finish("var", out_shape, acc, Op::Var { x, axes: axes.to_vec() }, &[x])
    }

    // ---- softmax -------------------------------------------------------------

    /// Softmax over the last axis with an optional additive mask
    /// (entries 0 or the [`MASK_SENTINEL`](super::element::MASK_SENTINEL)).
    /// Masked entries get probability exactly 0; a fully masked row is an error.
    pub fn softmax(&mut self, x: TensorId, mask: Option<TensorId>) -> Result<TensorId, NumericsError> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if shape.is_empty() {
            return Err(NumericsError::ShapeMismatch { op: "softmax", details: "rank-0 input".into() });
        }
        let cols = *shape.last().unwrap();
        let rows = v.numel() / cols.max(1);
        if cols == 0 {
            return Err(NumericsError::AllMasked { row: 0 });
        }

        // broadcast mask offsets per row
        let mask_info = match mask {
            Some(m) => {
                let ms = self.value(m).shape();
                let ok = broadcast_shape(ms, &shape).map(|bs| bs == shape).unwrap_or(false)
                    && *ms.last().unwrap_or(&0) == cols;
                if !ok {
                    return Err(NumericsError::ShapeMismatch {
                        op: "softmax",
                        details: format!("mask {ms:?} vs input {shape:?}"),
                    });
                }
                Some((m, broadcast_strides(ms, &shape)))
            }
            None => None,
        };

        let data = v.data();
        let mut out = vec![0.0f64; rows * cols];
        let lead = &shape[..shape.len() - 1];
        let mut idx = vec![0usize; lead.len()];
        let mut mask_row_off = 0usize;
        for r in 0..rows {
            let base = r * cols;
            let row = &data[base..base + cols];
            let out_row = &mut out[base..base + cols];
            let mask_row: Option<&[E]> = mask_info.as_ref().map(|(m, strides)| {
                let md = self.nodes[m.0].value.data();
                debug_assert!(*strides.last().unwrap() == 1 || cols == 1);
                &md[mask_row_off..mask_row_off + cols]
            });
            match mask_row {
                None => {
                    let mut row_max = f64::NEG_INFINITY;
                    for e in row {
                        row_max = row_max.max(e.to_f64());
                    }
                    let mut denom = 0.0f64;
                    for (o, e) in out_row.iter_mut().zip(row) {
                        let z = (e.to_f64() - row_max).exp();
                        *o = z;
                        denom += z;
                    }
                    for o in out_row.iter_mut() {
                        *o /= denom;
                    }
                }
                Some(mv) => {
                    // masked entries keep exactly 0: exp(sentinel + x - max)
                    // underflows to 0, so skipping the exp is bit-identical
                    let mut row_max = f64::NEG_INFINITY;
                    let mut any_unmasked = false;
                    for (e, m) in row.iter().zip(mv) {
                        if m.to_f64() > MASK_THRESHOLD {
                            any_unmasked = true;
                            row_max = row_max.max(e.to_f64());
                        }
                    }
                    if !any_unmasked {
                        return Err(NumericsError::AllMasked { row: r });
                    }
                    let mut denom = 0.0f64;
                    for ((o, e), m) in out_row.iter_mut().zip(row).zip(mv) {
                        if m.to_f64() > MASK_THRESHOLD {
                            let z = (e.to_f64() + m.to_f64() - row_max).exp();
                            *o = z;
                            denom += z;
                        }
                    }
                    for (o, m) in out_row.iter_mut().zip(mv) {
                        if m.to_f64() > MASK_THRESHOLD {
                            *o /= denom;
                        }
                    }
                }
            }
            // advance broadcast mask offset over leading axes
            if let Some((_, strides)) = &mask_info {
                for d in (0..lead.len()).rev() {
                    idx[d] += 1;
                    mask_row_off += strides[d];
                    if idx[d] < lead[d] {
                        break;
                    }
                    idx[d] = 0;
                    mask_row_off -= strides[d] * lead[d];
                }
            }
        }
        // gradient flows to the logits only, never to the mask
        self.finish("softmax", shape, out, Op::Softmax { x }, &[x])
    }

    // ---- gather ----------------------------------------------------------------

    /// Select rows of a 2-D table by index.
    pub fn gather_rows(&mut self, table: TensorId, indices: &[usize]) -> Result<TensorId, NumericsError> {
        let v = self.value(table);
        if v.rank() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "gather_rows",
                details: format!("table must be 2-D, got {:?}", v.shape()),
            });
        }
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        for &i in indices {
            if i >= rows {
                return Err(NumericsError::IndexOutOfRange { index: i, len: rows });
            }
        }
        let data = v.data();
        let mut out = vec![E::ZERO; indices.len() * cols];
        for (k, &i) in indices.iter().enumerate() {
            out[k * cols..(k + 1) * cols].copy_from_slice(&data[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![indices.len(), cols], out)?;
        let needs = self.needs(&[table]);
        Ok(self.push(t, Op::GatherRows { table, indices: indices.to_vec() }, needs))
    }

    // ---- matmul ----------------------------------------------------------------

    /// Matrix multiply with optional leading batch axes.
    ///
    /// Shapes: `a = [..batch, m, k]`, `b = [..batch, k, n]` or `b = [k, n]`
    /// (the 2-D right operand broadcasts over the batch). Inner products
    /// accumulate in f64.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let dims = matmul_dims(&sa, &sb).ok_or_else(|| NumericsError::ShapeMismatch {
            op: "matmul",
            details: format!("{sa:?} @ {sb:?}"),
        })?;
        let MatmulDims { batch, m, k, n, b_batched } = dims;
        let da = self.value(a).to_f64_vec();
        let db = self.value(b).to_f64_vec();
        let mut out = vec![0.0f64; batch * m * n];
        for bi in 0..batch {
            let a_off = bi * m * k;
            let b_off = if b_batched { bi * k * n } else { 0 };
            matmul_slice(
                &da[a_off..a_off + m * k],
                &db[b_off..b_off + k * n],
                m,
                k,
                n,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        self.finish("matmul", out_shape, out, Op::Matmul { a, b }, &[a, b])
    }

    // ---- backward ----------------------------------------------------------------

    /// Reverse sweep from a scalar output. Each node is visited exactly once;
    /// gradients accumulate in f64 and are rounded to the storage type at the end.
    pub fn backward(&self, output: TensorId) -> Result<Gradients<E>, NumericsError> {
        let out_node = &self.nodes[output.0];
        if out_node.value.numel() != 1 {
            return Err(NumericsError::NotScalar { shape: out_node.value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let d = grads[id].take().unwrap();
            // keep the seed available for the caller
            grads[id] = Some(d.clone());
            self.backward_node(id, &d, &mut grads);
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|v| {
                    Tensor::from_f64_slice(self.nodes[i].value.shape().to_vec(), &v)
                        .expect("gradient shape matches node value")
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: TensorId, contrib: Vec<f64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backward_node(&self, id: usize, d: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                let (sa, sb) = (self.shape_of(*a), self.shape_of(*b));
                self.accumulate(grads, *a, reduce_to_shape(d, out_shape, &sa));
                self.accumulate(grads, *b, reduce_to_shape(d, out_shape, &sb));
            }
            Op::Sub { a, b } => {
                let (sa, sb) = (self.shape_of(*a), self.shape_of(*b));
                self.accumulate(grads, *a, reduce_to_shape(d, out_shape, &sa));
                let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                self.accumulate(grads, *b, reduce_to_shape(&neg, out_shape, &sb));
            }
            Op::Mul { a, b } => {
                let (sa, sb) = (self.shape_of(*a), self.shape_of(*b));
                let da = self.broadcast_weighted(d, out_shape, *b);
                let db = self.broadcast_weighted(d, out_shape, *a);
                self.accumulate(grads, *a, reduce_to_shape(&da, out_shape, &sa));
                self.accumulate(grads, *b, reduce_to_shape(&db, out_shape, &sb));
            }
            Op::Div { a, b } => {
                let (sa, sb) = (self.shape_of(*a), self.shape_of(*b));
                let av = self.broadcast_values(*a, out_shape);
                let bv = self.broadcast_values(*b, out_shape);
                let da: Vec<f64> = d.iter().zip(&bv).map(|(g, y)| g / y).collect();
                let db: Vec<f64> = d
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                self.accumulate(grads, *a, reduce_to_shape(&da, out_shape, &sa));
                self.accumulate(grads, *b, reduce_to_shape(&db, out_shape, &sb));
            }
            Op::Silu { x } => {
                let xv = self.nodes[x.0].value.data();
                let dx: Vec<f64> = d
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| {
                        let v = v.to_f64();
                        let s = sigmoid(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu { x } => {
                let xv = self.nodes[x.0].value.data();
                let dx: Vec<f64> = d
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| g * gelu_tanh_deriv(v.to_f64()))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sqrt { x } => {
                let yv = node.value.data();
                let dx: Vec<f64> = d
                    .iter()
                    .zip(yv)
                    .map(|(g, y)| g * 0.5 / y.to_f64())
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, d.iter().map(|g| g * c).collect());
            }
            Op::AddConst { x, .. } => {
                self.accumulate(grads, *x, d.to_vec());
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, d.to_vec());
            }
            Op::Permute { x, perm } => {
                // inverse permutation sends the gradient back
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let in_shape = self.shape_of(*x);
                let out_strides = contiguous_strides(out_shape);
                let src_strides: Vec<usize> = inv.iter().map(|&p| out_strides[p]).collect();
                let mut dx = vec![0.0f64; d.len()];
                let mut idx = vec![0usize; in_shape.len()];
                let mut src = 0usize;
                for slot in dx.iter_mut() {
                    *slot = d[src];
                    for dd in (0..in_shape.len()).rev() {
                        idx[dd] += 1;
                        src += src_strides[dd];
                        if idx[dd] < in_shape[dd] {
                            break;
                        }
                        idx[dd] = 0;
                        src -= src_strides[dd] * in_shape[dd];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { xs, axis } => {
                let axis = *axis;
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let row = out_shape[axis] * inner;
                let mut read_off = 0usize;
                for &xid in xs {
                    let s = self.shape_of(xid);
                    let len = s[axis];
                    let mut dx = vec![0.0f64; s.iter().product()];
                    for o in 0..outer {
                        let src = o * row + read_off;
                        let dst = o * len * inner;
                        dx[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
                    }
                    read_off += len * inner;
                    self.accumulate(grads, xid, dx);
                }
            }
            Op::Narrow { x, axis, start, len } => {
                let in_shape = self.shape_of(*x);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let mut dx = vec![0.0f64; in_shape.iter().product()];
                for o in 0..outer {
                    let dst = (o * in_shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum { x, axes } | Op::Mean { x, axes } => {
                let in_shape = self.shape_of(*x);
                let count: usize = axes.iter().map(|&a| in_shape[a]).product();
                let scale = if matches!(node.op, Op::Mean { .. }) {
                    1.0 / count as f64
                } else {
                    1.0
                };
                let map = self.reduce_map(&in_shape, axes);
                let mut dx = vec![0.0f64; in_shape.iter().product()];
                let mut idx = vec![0usize; in_shape.len()];
                let mut off = 0usize;
                for slot in dx.iter_mut() {
                    *slot = d[off] * scale;
                    for dd in (0..in_shape.len()).rev() {
                        idx[dd] += 1;
                        off += map[dd];
                        if idx[dd] < in_shape[dd] {
                            break;
                        }
                        idx[dd] = 0;
                        off -= map[dd] * in_shape[dd];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Var { x, axes, .. } => {
                let in_shape = self.shape_of(*x);
                let count: usize = axes.iter().map(|&a| in_shape[a]).product();
                let map = self.reduce_map(&in_shape, axes);
                let out_len = d.len();
                // recompute per-group means
                let mut means = vec![0.0f64; out_len];
                let xv = self.nodes[x.0].value.data();
                let mut idx = vec![0usize; in_shape.len()];
                let mut off = 0usize;
                for e in xv {
                    means[off] += e.to_f64();
                    for dd in (0..in_shape.len()).rev() {
                        idx[dd] += 1;
                        off += map[dd];
                        if idx[dd] < in_shape[dd] {
                            break;
                        }
                        idx[dd] = 0;
                        off -= map[dd] * in_shape[dd];
                    }
                }
                for m in means.iter_mut() {
                    *m /= count as f64;
                }
                let mut dx = vec![0.0f64; xv.len()];
                idx.iter_mut().for_each(|v| *v = 0);
                off = 0;
                for (i, e) in xv.iter().enumerate() {
                    dx[i] = d[off] * 2.0 * (e.to_f64() - means[off]) / count as f64;
                    for dd in (0..in_shape.len()).rev() {
                        idx[dd] += 1;
                        off += map[dd];
                        if idx[dd] < in_shape[dd] {
                            break;
                        }
                        idx[dd] = 0;
                        off -= map[dd] * in_shape[dd];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let cols = *out_shape.last().unwrap();
                let rows = y.len() / cols;
                let mut dx = vec![0.0f64; y.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let mut dot = 0.0f64;
                    for j in 0..cols {
                        dot += d[base + j] * y[base + j].to_f64();
                    }
                    for j in 0..cols {
                        let yj = y[base + j].to_f64();
                        dx[base + j] = yj * (d[base + j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherRows { table, indices } => {
                let tb = self.shape_of(*table);
                let cols = tb[1];
                let mut dt = vec![0.0f64; tb[0] * cols];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..cols {
                        dt[i * cols + j] += d[k * cols + j];
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.shape_of(*a), self.shape_of(*b));
                let dims = matmul_dims(&sa, &sb).expect("validated in forward");
                let MatmulDims { batch, m, k, n, b_batched } = dims;
                let av = self.nodes[a.0].value.to_f64_vec();
                let bv = self.nodes[b.0].value.to_f64_vec();
                // dA = dC @ B^T
                let mut da = vec![0.0f64; batch * m * k];
                let mut bt = vec![0.0f64; k * n];
                for bi in 0..batch {
                    let b_off = if b_batched { bi * k * n } else { 0 };
                    transpose_slice(&bv[b_off..b_off + k * n], k, n, &mut bt);
                    matmul_slice(
                        &d[bi * m * n..(bi + 1) * m * n],
                        &bt,
                        m,
                        n,
                        k,
                        &mut da[bi * m * k..(bi + 1) * m * k],
                    );
                }
                self.accumulate(grads, *a, da);
                // dB = A^T @ dC, summed over the batch when B is shared
                let db_len = if b_batched { batch * k * n } else { k * n };
                let mut db = vec![0.0f64; db_len];
                let mut at = vec![0.0f64; k * m];
                let mut scratch = vec![0.0f64; k * n];
                for bi in 0..batch {
                    transpose_slice(&av[bi * m * k..(bi + 1) * m * k], m, k, &mut at);
                    if b_batched {
                        matmul_slice(
                            &at,
                            &d[bi * m * n..(bi + 1) * m * n],
                            k,
                            m,
                            n,
                            &mut db[bi * k * n..(bi + 1) * k * n],
                        );
                    } else {
                        matmul_slice(&at, &d[bi * m * n..(bi + 1) * m * n], k, m, n, &mut scratch);
                        for (acc, s) in db.iter_mut().zip(&scratch) {
                            *acc += s;
                        }
                    }
                }
                self.accumulate(grads, *b, db);
            }
        }
    }

    fn shape_of(&self, id: TensorId) -> Vec<usize> {
        self.nodes[id.0].value.shape().to_vec()
    }

    fn reduce_map(&self, shape: &[usize], axes: &[usize]) -> Vec<usize> {
        let mut kept = shape.to_vec();
        for &a in axes {
            kept[a] = 1;
        }
        broadcast_strides(&kept, shape)
    }

    /// Values of `id` broadcast to `full` shape, as f64.
    fn broadcast_values(&self, id: TensorId, full: &[usize]) -> Vec<f64> {
        let v = &self.nodes[id.0].value;
        let n: usize = full.iter().product();
        if v.shape() == full {
            return v.to_f64_vec();
        }
        let strides = broadcast_strides(v.shape(), full);
        let data = v.data();
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; full.len()];
        let mut off = 0usize;
        for _ in 0..n {
            out.push(data[off].to_f64());
            for d in (0..full.len()).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < full[d] {
                    break;
                }
                idx[d] = 0;
                off -= strides[d] * full[d];
            }
        }
        out
    }

    /// d * broadcast(values of other), elementwise over the output shape.
    fn broadcast_weighted(&self, d: &[f64], full: &[usize], other: TensorId) -> Vec<f64> {
        let o = self.broadcast_values(other, full);
        d.iter().zip(&o).map(|(g, v)| g * v).collect()
    }
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Option<MatmulDims> {
    if sa.len() < 2 || sb.len() < 2 {
        return None;
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != kb {
        return None;
    }
    let batch: usize = sa[..sa.len() - 2].iter().product();
    let b_batched = sb.len() > 2;
    if b_batched && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
        return None;
    }
    Some(MatmulDims { batch, m, k, n, b_batched })
}

/// C = A @ B for row-major slices; i-k-j with a 4-way unroll over k so the
/// inner axis streams contiguously with independent accumulator chains.
pub(crate) fn matmul_slice(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let row_out = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        let mut p = 0usize;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                row_out[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            p += 4;
        }
        while p < k {
            let av = a_row[p];
            let row_b = &b[p * n..(p + 1) * n];
            for (o, bv) in row_out.iter_mut().zip(row_b) {
                *o += av * bv;
            }
            p += 1;
        }
    }
}

pub(crate) fn transpose_slice(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_COEF: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_tanh_deriv(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
