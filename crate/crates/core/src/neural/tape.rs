//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a `1 x 1` node fills gradient slots for every
//! node that influences it; trainable parameters are then collected with
//! [`ParamStore::accumulate`](super::ParamStore::accumulate).

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { store: u64, id: ParamId },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    LogClamped(Var, f64),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherCols(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    BroadcastRows(Var),
    SumAll(Var),
    RowSums(Var),
    SoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "scalar() on non-scalar node");
        t.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// A constant input; gradients reaching it are kept but never applied.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A parameter read from `store`. Non-trainable parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        if store.is_trainable(id) {
            self.push(
                value,
                Op::Param {
                    store: store.tag(),
                    id,
                },
            )
        } else {
            self.push(value, Op::Leaf)
        }
    }

    pub(crate) fn param_nodes(&self, store_tag: u64) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param { store, id } if store == store_tag => Some((id, self.grads.get(i).and_then(Option::as_ref))),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `a (n x m) + row (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies row `i` of `a` by `w[i][0]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Var {
        let (av, wv) = (self.value(a), self.value(w));
        assert_eq!(wv.shape(), (av.rows(), 1), "scale_rows expects an n x 1 weight column");
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = wv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        self.push(out, Op::ScaleRows(a, w))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor).ln());
        self.push(v, Op::LogClamped(a, floor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Output column `j` is input column `idx[j]`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), idx.len());
        for r in 0..av.rows() {
            let src = av.row(r);
            for (o, &j) in out.row_mut(r).iter_mut().zip(idx) {
                *o = src[j];
            }
        }
        self.push(out, Op::GatherCols(a, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(idx.len(), av.cols());
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(av.row(r));
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    /// Adds input row `i` into output row `idx[i]`; the output has `n_out` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), idx.len(), "scatter_add_rows index length mismatch");
        let mut out = Tensor::zeros(n_out, av.cols());
        for (i, &r) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(r).iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let mut full = idx.to_vec();
        full.push(n_out);
        self.push(out, Op::ScatterAddRows(a, full))
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1, "broadcast_rows expects a row vector");
        let mut data = Vec::with_capacity(n * av.cols());
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        let out = Tensor::from_vec(n, av.cols(), data);
        self.push(out, Op::BroadcastRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    /// Per-row sums, `n x 1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(av.rows(), 1, data);
        self.push(out, Op::RowSums(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Runs the reverse sweep from a `1 x 1` node. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.shape(loss), (1, 1), "backward() needs a scalar loss");
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn accum(&mut self, v: Var, g: Tensor) {
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_transposed(self.value(b));
                let gb = self.value(a).transposed_matmul(g);
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::Add(a, b) => {
                self.accum(a, g.clone());
                self.accum(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(a, g.clone());
                self.accum(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(b), |x, y| x * y);
                let gb = g.zip_map(self.value(a), |x, y| x * y);
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::AddRow(a, row) => {
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                self.accum(a, g.clone());
                self.accum(row, gr);
            }
            Op::ScaleRows(a, w) => {
                let (av, wv) = (self.value(a), self.value(w));
                let mut ga = g.clone();
                let mut gw = Tensor::zeros(wv.rows(), 1);
                for r in 0..g.rows() {
                    let s = wv.get(r, 0);
                    let dot: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                    gw.set(r, 0, dot);
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                self.accum(a, ga);
                self.accum(w, gw);
            }
            Op::Scale(a, k) => self.accum(a, g.map(|x| x * k)),
            Op::AddScalar(a) => self.accum(a, g.clone()),
            Op::Tanh(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, y| x * (1.0 - y * y));
                self.accum(a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, y| x * y * (1.0 - y));
                self.accum(a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(a), |x, y| if y > 0.0 { x } else { 0.0 });
                self.accum(a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(&self.nodes[i].value, |x, y| x * y);
                self.accum(a, ga);
            }
            Op::LogClamped(a, floor) => {
                let ga = g.zip_map(self.value(a), |x, y| if y > floor { x / y } else { 0.0 });
                self.accum(a, ga);
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(a), |x, y| 2.0 * x * y);
                self.accum(a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    self.accum(p, gp);
                }
            }
            Op::SliceCols(a, start) => {
                let mut ga = Tensor::zeros(g.rows(), self.value(a).cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accum(a, ga);
            }
            Op::GatherCols(a, idx) => {
                let mut ga = Tensor::zeros(g.rows(), self.value(a).cols());
                for r in 0..g.rows() {
                    let src = g.row(r);
                    let dst = ga.row_mut(r);
                    for (k, &j) in idx.iter().enumerate() {
                        dst[j] += src[k];
                    }
                }
                self.accum(a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let gp = Tensor::from_vec(rows, cols, g.data()[offset * cols..(offset + rows) * cols].to_vec());
                    offset += rows;
                    self.accum(p, gp);
                }
            }
            Op::GatherRows(a, idx) => {
                let mut ga = Tensor::zeros(self.value(a).rows(), g.cols());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                self.accum(a, ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let n_in = idx.len() - 1;
                let mut ga = Tensor::zeros(n_in, g.cols());
                for (k, &r) in idx[..n_in].iter().enumerate() {
                    ga.row_mut(k).copy_from_slice(g.row(r));
                }
                self.accum(a, ga);
            }
            Op::BroadcastRows(a) => {
                let mut ga = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in ga.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                self.accum(a, ga);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.value(a).shape();
                self.accum(a, Tensor::filled(rows, cols, g.get(0, 0)));
            }
            Op::RowSums(a) => {
                let (rows, cols) = self.value(a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let s = g.get(r, 0);
                    ga.row_mut(r).iter_mut().for_each(|x| *x = s);
                }
                self.accum(a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                    for ((o, &gx), &p) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = p * (gx - dot);
                    }
                }
                self.accum(a, ga);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}
