//! Append-only computation graph with reverse-mode gradients.
//!
//! Every primitive evaluates eagerly and records its inputs; node inputs always
//! refer to earlier nodes, so a reverse scan over the node list is a valid
//! topological order for backpropagation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::OnceLock;

use indexmap::IndexMap;

use super::gemm::{gemm, Mat};
use super::{lse, sigmoid, ParamStore, Result, Tensor, TensorError};
use crate::crf;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: usize,
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

enum Op {
    Leaf,
    Param,
    MatMul { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    AddN(Vec<usize>),
    LogSumExp(usize),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        segments: Vec<usize>,
    },
    MaxOverTime { x: usize, argmax: Vec<usize> },
    Gather { src: usize, idx: Vec<Option<usize>> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    Reshape(usize),
    CrfLogPartition { e: usize, trans: usize, start: usize, end: usize },
    CrfPathScore {
        e: usize,
        trans: usize,
        start: usize,
        end: usize,
        tags: Vec<usize>,
    },
    CrossEntropy { e: usize, gold: Vec<usize> },
}

struct Node {
    value: Value,
    op: Op,
}

/// Gradients keyed by parameter name. Every parameter registered in the graph
/// gets an entry, zero when it does not influence the loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: IndexMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.grads.iter_mut().map(|(k, v)| (k.as_str(), v))
    }
}

pub struct Graph<'p> {
    id: u32,
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, usize>,
}

fn empty_store() -> &'static ParamStore {
    static EMPTY: OnceLock<ParamStore> = OnceLock::new();
    EMPTY.get_or_init(ParamStore::new)
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(mismatch(op, other, &[0, 0])),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn buf(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// A graph with no parameter store; only constants can be leaves.
    pub fn without_params() -> Graph<'static> {
        Graph::new(empty_store())
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignNode);
        }
        Ok(v.index)
    }

    fn val(&self, idx: usize) -> &Tensor {
        match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.by_index(*p),
        }
    }

    /// Value of a node.
    ///
    /// # Panics
    /// If `v` was created by another graph.
    pub fn value(&self, v: Var) -> &Tensor {
        let idx = self.idx(v).expect("variable belongs to another graph");
        self.val(idx)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(Tensor::from_parts(shape, data), op))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    /// Node for the named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let p = self
            .params
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if let Some(&idx) = self.param_nodes.get(&p) {
            return Ok(Var {
                graph: self.id,
                index: idx,
            });
        }
        self.nodes.push(Node {
            value: Value::Param(p),
            op: Op::Param,
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes.insert(p, idx);
        Ok(Var {
            graph: self.id,
            index: idx,
        })
    }

    // ---------------------------------------------------------------- linear

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        let (m, k) = as_matrix("matmul", ta)?;
        let (k2, n) = as_matrix("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, Mat::new(ta.data(), k, 1), Mat::new(tb.data(), n, 1), &mut out, false);
        self.push("matmul", vec![m, n], out, Op::MatMul { a: ai, b: bi, trans_b: false })
    }

    /// `a (m×k) · bᵀ` for `b (n×k)`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        let (m, k) = as_matrix("matmul_t", ta)?;
        let (n, k2) = as_matrix("matmul_t", tb)?;
        if k != k2 {
            return Err(mismatch("matmul_t", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, Mat::new(ta.data(), k, 1), Mat::transposed(tb.data(), k), &mut out, false);
        self.push("matmul_t", vec![m, n], out, Op::MatMul { a: ai, b: bi, trans_b: true })
    }

    // ----------------------------------------------------------- elementwise

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((ai, bi, Tensor::from_parts(ta.shape().to_vec(), data)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary("add", a, b, |x, y| x + y)?;
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push("add", shape, data, Op::Add(ai, bi))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary("sub", a, b, |x, y| x - y)?;
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push("sub", shape, data, Op::Sub(ai, bi))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary("mul", a, b, |x, y| x * y)?;
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push("mul", shape, data, Op::Mul(ai, bi))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let shape = ta.shape().to_vec();
        let data = ta.data().iter().map(|x| f(*x)).collect();
        self.push(name, shape, data, op(ai))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu)
    }

    /// Adds a bias vector along the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(bias)?);
        let (ta, tb) = (self.val(ai), self.val(bi));
        let last = *ta.shape().last().unwrap_or(&0);
        if tb.shape() != [last] {
            return Err(mismatch("add_bias", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        if last > 0 {
            for row in data.chunks_mut(last) {
                add_into(row, tb.data());
            }
        }
        let shape = ta.shape().to_vec();
        self.push("add_bias", shape, data, Op::AddBias(ai, bi))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let shape = ta.shape().to_vec();
        let data = ta.data().iter().map(|x| x * c).collect();
        self.push("scale", shape, data, Op::Scale(ai, c))
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.val(ai).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(ai))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(TensorError::Empty { op: "add_n" })?;
        let idxs = vars.iter().map(|v| self.idx(*v)).collect::<Result<Vec<_>>>()?;
        let shape = self.val(self.idx(first)?).shape().to_vec();
        let mut data = vec![0.0; shape.iter().product()];
        for &i in &idxs {
            let t = self.val(i);
            if t.shape() != shape.as_slice() {
                return Err(mismatch("add_n", &shape, t.shape()));
            }
            add_into(&mut data, t.data());
        }
        self.push("add_n", shape, data, Op::AddN(idxs))
    }

    /// `log Σ exp(v)` over all entries, overflow-safe.
    pub fn logsumexp(&mut self, v: Var) -> Result<Var> {
        let vi = self.idx(v)?;
        let t = self.val(vi);
        if t.is_empty() {
            return Err(TensorError::Empty { op: "logsumexp" });
        }
        let out = lse(t.data());
        self.push("logsumexp", vec![1], vec![out], Op::LogSumExp(vi))
    }

    // ---------------------------------------------------------- convolution

    /// Same-padded 1-D convolution of `x (T×C_in)` with `w (W×C_in×C_out)`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let t = self.value(x).rows();
        self.conv1d_same_segments(x, w, b, &[t])
    }

    /// Convolves each consecutive row segment of `x` independently, with zero
    /// padding at every segment boundary.
    pub fn conv1d_same_segments(&mut self, x: Var, w: Var, b: Var, segments: &[usize]) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (tx, tw, tb) = (self.val(xi), self.val(wi), self.val(bi));
        let (n, c_in) = as_matrix("conv1d", tx)?;
        let (win, c_in2, c_out) = match tw.shape() {
            [a, b, c] => (*a, *b, *c),
            other => return Err(mismatch("conv1d", tx.shape(), other)),
        };
        if win % 2 == 0 {
            return Err(TensorError::EvenWindow(win));
        }
        if c_in != c_in2 {
            return Err(mismatch("conv1d", tx.shape(), tw.shape()));
        }
        if tb.shape() != [c_out] {
            return Err(mismatch("conv1d", tw.shape(), tb.shape()));
        }
        if segments.iter().sum::<usize>() != n {
            return Err(mismatch("conv1d", &[n], &[segments.iter().sum()]));
        }
        if n == 0 || segments.contains(&0) {
            return Err(TensorError::Empty { op: "conv1d" });
        }
        let half = win / 2;
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = Vec::with_capacity(n * c_out);
        for _ in 0..n {
            out.extend_from_slice(tb.data());
        }
        let mut offset = 0;
        for &len in segments {
            for t in 0..len {
                let y = &mut out[(offset + t) * c_out..(offset + t + 1) * c_out];
                for d in 0..win {
                    let Some(src) = (t + d).checked_sub(half).filter(|s| *s < len) else {
                        continue;
                    };
                    let xrow = &xd[(offset + src) * c_in..(offset + src + 1) * c_in];
                    for (c, &xv) in xrow.iter().enumerate() {
                        let wrow = &wd[(d * c_in + c) * c_out..(d * c_in + c + 1) * c_out];
                        for (yo, wv) in y.iter_mut().zip(wrow) {
                            *yo += xv * wv;
                        }
                    }
                }
            }
            offset += len;
        }
        self.push(
            "conv1d",
            vec![n, c_out],
            out,
            Op::Conv1d {
                x: xi,
                w: wi,
                b: bi,
                segments: segments.to_vec(),
            },
        )
    }

    /// Per-channel maximum over time of `x (T×C)`, shape `[C]`. Gradient goes to
    /// the earliest maximal position.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (t, c) = as_matrix("max_over_time", self.value(x))?;
        let v = self.max_over_time_segments(x, &[t])?;
        let vi = self.idx(v)?;
        if let Value::Owned(tensor) = &mut self.nodes[vi].value {
            let old = std::mem::replace(tensor, Tensor::from_parts(vec![0], Vec::new()));
            *tensor = Tensor::from_parts(vec![c], old.into_data());
        }
        Ok(v)
    }

    /// Per-segment, per-channel maximum, shape `[S×C]`.
    pub fn max_over_time_segments(&mut self, x: Var, segments: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let tx = self.val(xi);
        let (n, c) = as_matrix("max_over_time", tx)?;
        if n == 0 || segments.is_empty() || segments.contains(&0) {
            return Err(TensorError::Empty { op: "max_over_time" });
        }
        if segments.iter().sum::<usize>() != n {
            return Err(mismatch("max_over_time", &[n], &[segments.iter().sum()]));
        }
        let xd = tx.data();
        let mut out = Vec::with_capacity(segments.len() * c);
        let mut argmax = Vec::with_capacity(segments.len() * c);
        let mut offset = 0;
        for &len in segments {
            for ch in 0..c {
                let mut best = offset;
                for r in offset + 1..offset + len {
                    if xd[r * c + ch] > xd[best * c + ch] {
                        best = r;
                    }
                }
                out.push(xd[best * c + ch]);
                argmax.push(best);
            }
            offset += len;
        }
        self.push("max_over_time", vec![segments.len(), c], out, Op::MaxOverTime { x: xi, argmax })
    }

    // ------------------------------------------------------------ structure

    /// Stacks rows of `src` picked by `idx`; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, idx: &[Option<usize>]) -> Result<Var> {
        let si = self.idx(src)?;
        let ts = self.val(si);
        let (rows, cols) = as_matrix("gather_rows", ts)?;
        let mut out = vec![0.0; idx.len() * cols];
        for (r, id) in idx.iter().enumerate() {
            if let Some(id) = *id {
                if id >= rows {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_rows",
                        index: id,
                        size: rows,
                    });
                }
                out[r * cols..(r + 1) * cols].copy_from_slice(ts.row(id));
            }
        }
        self.push(
            "gather_rows",
            vec![idx.len(), cols],
            out,
            Op::Gather {
                src: si,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var> {
        let idxs = vars.iter().map(|v| self.idx(*v)).collect::<Result<Vec<_>>>()?;
        let first = *idxs.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let rows = as_matrix("concat_cols", self.val(first))?.0;
        let mut widths = Vec::with_capacity(idxs.len());
        for &i in &idxs {
            let (r, c) = as_matrix("concat_cols", self.val(i))?;
            if r != rows {
                return Err(mismatch("concat_cols", self.val(first).shape(), self.val(i).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idxs {
                out.extend_from_slice(self.val(i).row(r));
            }
        }
        self.push("concat_cols", vec![rows, total], out, Op::ConcatCols(idxs))
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let idxs = vars.iter().map(|v| self.idx(*v)).collect::<Result<Vec<_>>>()?;
        let first = *idxs.first().ok_or(TensorError::Empty { op: "concat_rows" })?;
        let cols = as_matrix("concat_rows", self.val(first))?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &i in &idxs {
            let (r, c) = as_matrix("concat_rows", self.val(i))?;
            if c != cols {
                return Err(mismatch("concat_rows", self.val(first).shape(), self.val(i).shape()));
            }
            out.extend_from_slice(self.val(i).data());
            rows += r;
        }
        self.push("concat_rows", vec![rows, cols], out, Op::ConcatRows(idxs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let (rows, cols) = as_matrix("slice_cols", ta)?;
        if start + width > cols {
            return Err(mismatch("slice_cols", ta.shape(), &[start + width]));
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&ta.row(r)[start..start + width]);
        }
        self.push("slice_cols", vec![rows, width], out, Op::SliceCols { a: ai, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        let (rows, cols) = as_matrix("slice_rows", ta)?;
        if start + count > rows {
            return Err(mismatch("slice_rows", ta.shape(), &[start + count]));
        }
        let out = ta.data()[start * cols..(start + count) * cols].to_vec();
        self.push("slice_rows", vec![count, cols], out, Op::SliceRows { a: ai, start })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ai = self.idx(a)?;
        let ta = self.val(ai);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(mismatch("reshape", ta.shape(), shape));
        }
        let out = ta.data().to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(ai))
    }

    // --------------------------------------------------------- structured loss

    fn crf_inputs(&self, e: Var, trans: Var, start: Var, end: Var) -> Result<[usize; 4]> {
        let ids = [self.idx(e)?, self.idx(trans)?, self.idx(start)?, self.idx(end)?];
        let (t, l) = as_matrix("crf", self.val(ids[0]))?;
        if t == 0 {
            return Err(TensorError::Empty { op: "crf" });
        }
        if self.val(ids[1]).shape() != [l, l] {
            return Err(mismatch("crf", self.val(ids[0]).shape(), self.val(ids[1]).shape()));
        }
        for &i in &ids[2..] {
            if self.val(i).shape() != [l] {
                return Err(mismatch("crf", self.val(ids[0]).shape(), self.val(i).shape()));
            }
        }
        Ok(ids)
    }

    /// CRF log-partition of emissions `e (T×L)` by the log-space forward algorithm.
    pub fn crf_log_partition(&mut self, e: Var, trans: Var, start: Var, end: Var) -> Result<Var> {
        let [ei, ti, si, ni] = self.crf_inputs(e, trans, start, end)?;
        let lz = crf::forward_log_partition(self.val(ei), self.val(ti), self.val(si), self.val(ni));
        self.push(
            "crf_log_partition",
            vec![1],
            vec![lz],
            Op::CrfLogPartition {
                e: ei,
                trans: ti,
                start: si,
                end: ni,
            },
        )
    }

    /// Unnormalized score of one tag path.
    pub fn crf_path_score(&mut self, e: Var, trans: Var, start: Var, end: Var, tags: &[usize]) -> Result<Var> {
        let [ei, ti, si, ni] = self.crf_inputs(e, trans, start, end)?;
        let score = crf::raw_path_score(self.val(ei), self.val(ti), self.val(si), self.val(ni), tags)
            .map_err(|_| mismatch("crf_path_score", self.val(ei).shape(), &[tags.len()]))?;
        self.push(
            "crf_path_score",
            vec![1],
            vec![score],
            Op::CrfPathScore {
                e: ei,
                trans: ti,
                start: si,
                end: ni,
                tags: tags.to_vec(),
            },
        )
    }

    /// `Σ_t logsumexp(e[t]) − e[t][gold_t]`, the per-position softmax cross-entropy.
    pub fn cross_entropy(&mut self, e: Var, gold: &[usize]) -> Result<Var> {
        let ei = self.idx(e)?;
        let te = self.val(ei);
        let (t, l) = as_matrix("cross_entropy", te)?;
        if gold.len() != t {
            return Err(mismatch("cross_entropy", te.shape(), &[gold.len()]));
        }
        let mut total = 0.0;
        for (r, &y) in gold.iter().enumerate() {
            if y >= l {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    size: l,
                });
            }
            total += lse(te.row(r)) - te.at(r, y);
        }
        self.push(
            "cross_entropy",
            vec![1],
            vec![total],
            Op::CrossEntropy {
                e: ei,
                gold: gold.to_vec(),
            },
        )
    }

    // -------------------------------------------------------------- backward

    /// Reverse-mode gradients of scalar `loss` with respect to every parameter
    /// node of the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.idx(loss)?;
        if self.val(li).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.val(li).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let out = self.val(i);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::MatMul { a, b, trans_b } => {
                    let (ta, tb) = (self.val(*a), self.val(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = out.shape()[1];
                    let gm = Mat::new(&g, n, 1);
                    if *trans_b {
                        // out = A·Bᵀ, B is n×k
                        gemm(m, n, k, gm, Mat::new(tb.data(), k, 1), buf(&mut grads, *a, m * k), true);
                        gemm(n, m, k, Mat::transposed(&g, n), Mat::new(ta.data(), k, 1), buf(&mut grads, *b, n * k), true);
                    } else {
                        gemm(m, n, k, gm, Mat::transposed(tb.data(), n), buf(&mut grads, *a, m * k), true);
                        gemm(k, m, n, Mat::transposed(ta.data(), k), gm, buf(&mut grads, *b, k * n), true);
                    }
                }
                Op::Add(a, b) => {
                    add_into(buf(&mut grads, *a, g.len()), &g);
                    add_into(buf(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(buf(&mut grads, *a, g.len()), &g);
                    for (d, s) in buf(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                    for ((d, gv), y) in buf(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(vb) {
                        *d += gv * y;
                    }
                    for ((d, gv), x) in buf(&mut grads, *b, g.len()).iter_mut().zip(&g).zip(va) {
                        *d += gv * x;
                    }
                }
                Op::Tanh(a) => {
                    for ((d, gv), y) in buf(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(out.data()) {
                        *d += gv * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for ((d, gv), y) in buf(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(out.data()) {
                        *d += gv * y * (1.0 - y);
                    }
                }
                Op::Relu(a) => {
                    let x = self.val(*a).data();
                    for ((d, gv), xv) in buf(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::AddBias(a, b) => {
                    add_into(buf(&mut grads, *a, g.len()), &g);
                    let width = self.val(*b).len();
                    let db = buf(&mut grads, *b, width);
                    if width > 0 {
                        for row in g.chunks(width) {
                            add_into(db, row);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    for (d, gv) in buf(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *d += c * gv;
                    }
                }
                Op::Sum(a) => {
                    let n = self.val(*a).len();
                    for d in buf(&mut grads, *a, n).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::AddN(inputs) => {
                    for &a in inputs {
                        add_into(buf(&mut grads, a, g.len()), &g);
                    }
                }
                Op::LogSumExp(a) => {
                    let x = self.val(*a).data();
                    let lz = out.item();
                    for (d, xv) in buf(&mut grads, *a, x.len()).iter_mut().zip(x) {
                        *d += g[0] * (xv - lz).exp();
                    }
                }
                Op::Conv1d { x, w, b, segments } => {
                    self.conv1d_backward(&g, *x, *w, *b, segments, &mut grads);
                }
                Op::MaxOverTime { x, argmax } => {
                    let tx = self.val(*x);
                    let c = tx.cols();
                    let dx = buf(&mut grads, *x, tx.len());
                    for (k, &row) in argmax.iter().enumerate() {
                        dx[row * c + k % c] += g[k];
                    }
                }
                Op::Gather { src, idx } => {
                    let ts = self.val(*src);
                    let c = ts.cols();
                    let ds = buf(&mut grads, *src, ts.len());
                    for (r, id) in idx.iter().enumerate() {
                        if let Some(id) = *id {
                            add_into(&mut ds[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                        }
                    }
                }
                Op::ConcatCols(inputs) => {
                    let total = out.cols();
                    let mut col = 0;
                    for &a in inputs {
                        let ta = self.val(a);
                        let (rows, w) = (ta.rows(), ta.cols());
                        let da = buf(&mut grads, a, rows * w);
                        for r in 0..rows {
                            add_into(&mut da[r * w..(r + 1) * w], &g[r * total + col..r * total + col + w]);
                        }
                        col += w;
                    }
                }
                Op::ConcatRows(inputs) => {
                    let mut offset = 0;
                    for &a in inputs {
                        let n = self.val(a).len();
                        add_into(buf(&mut grads, a, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::SliceCols { a, start } => {
                    let ta = self.val(*a);
                    let (rows, cols) = (ta.rows(), ta.cols());
                    let w = out.cols();
                    let da = buf(&mut grads, *a, rows * cols);
                    for r in 0..rows {
                        add_into(&mut da[r * cols + start..r * cols + start + w], &g[r * w..(r + 1) * w]);
                    }
                }
                Op::SliceRows { a, start } => {
                    let ta = self.val(*a);
                    let cols = ta.cols();
                    let da = buf(&mut grads, *a, ta.len());
                    add_into(&mut da[start * cols..start * cols + g.len()], &g);
                }
                Op::Reshape(a) => {
                    add_into(buf(&mut grads, *a, g.len()), &g);
                }
                Op::CrfLogPartition { e, trans, start, end } => {
                    let m = crf::marginals(self.val(*e), self.val(*trans), self.val(*start), self.val(*end));
                    let scale = g[0];
                    let acc = |grads: &mut [Option<Vec<f64>>], idx: usize, src: &[f64]| {
                        for (d, s) in buf(grads, idx, src.len()).iter_mut().zip(src) {
                            *d += scale * s;
                        }
                    };
                    acc(&mut grads, *e, &m.unary);
                    acc(&mut grads, *trans, &m.pairwise);
                    acc(&mut grads, *start, &m.start);
                    acc(&mut grads, *end, &m.end);
                }
                Op::CrfPathScore { e, trans, start, end, tags } => {
                    let l = self.val(*start).len();
                    let t = tags.len();
                    let de = buf(&mut grads, *e, t * l);
                    for (pos, &y) in tags.iter().enumerate() {
                        de[pos * l + y] += g[0];
                    }
                    let dt = buf(&mut grads, *trans, l * l);
                    for w in tags.windows(2) {
                        dt[w[0] * l + w[1]] += g[0];
                    }
                    buf(&mut grads, *start, l)[tags[0]] += g[0];
                    buf(&mut grads, *end, l)[tags[t - 1]] += g[0];
                }
                Op::CrossEntropy { e, gold } => {
                    let te = self.val(*e);
                    let l = te.cols();
                    let de = buf(&mut grads, *e, te.len());
                    for (r, &y) in gold.iter().enumerate() {
                        let row = te.row(r);
                        let lz = lse(row);
                        for (j, v) in row.iter().enumerate() {
                            de[r * l + j] += g[0] * (v - lz).exp();
                        }
                        de[r * l + y] -= g[0];
                    }
                }
            }
        }

        let mut out = Gradients::new();
        let mut params: Vec<(usize, usize)> = self.param_nodes.iter().map(|(p, n)| (*p, *n)).collect();
        params.sort_unstable();
        for (p, node) in params {
            let shape = self.params.by_index(p).shape().to_vec();
            let data = grads[node]
                .take()
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            out.insert(self.params.name_of(p), Tensor::from_parts(shape, data));
        }
        Ok(out)
    }

    fn conv1d_backward(
        &self,
        g: &[f64],
        x: usize,
        w: usize,
        b: usize,
        segments: &[usize],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (tx, tw) = (self.val(x), self.val(w));
        let (win, c_in, c_out) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        let half = win / 2;
        {
            let db = buf(grads, b, c_out);
            for row in g.chunks(c_out) {
                add_into(db, row);
            }
        }
        let mut dx = grads[x].take().unwrap_or_else(|| vec![0.0; tx.len()]);
        let mut dw = grads[w].take().unwrap_or_else(|| vec![0.0; tw.len()]);
        let (xd, wd) = (tx.data(), tw.data());
        let mut offset = 0;
        for &len in segments {
            for t in 0..len {
                let gy = &g[(offset + t) * c_out..(offset + t + 1) * c_out];
                for d in 0..win {
                    let Some(src) = (t + d).checked_sub(half).filter(|s| *s < len) else {
                        continue;
                    };
                    let r = offset + src;
                    for c in 0..c_in {
                        let k = (d * c_in + c) * c_out;
                        let wrow = &wd[k..k + c_out];
                        let xv = xd[r * c_in + c];
                        let mut acc = 0.0;
                        for ((dwv, wv), gv) in dw[k..k + c_out].iter_mut().zip(wrow).zip(gy) {
                            *dwv += xv * gv;
                            acc += wv * gv;
                        }
                        dx[r * c_in + c] += acc;
                    }
                }
            }
            offset += len;
        }
        grads[x] = Some(dx);
        grads[w] = Some(dw);
    }
}
