//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! The forward pass records a fixed vocabulary of matrix operations; a
//! backward sweep over the tape accumulates gradients into inputs and into
//! the [`ParamStore`]. Nodes that cannot reach a parameter or a
//! differentiable input are skipped during the sweep.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// CSR-style grouping of edge rows into per-target segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_offsets(offsets: Vec<usize>) -> Self {
        debug_assert!(offsets.first() == Some(&0));
        debug_assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
        Self { offsets }
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Self { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[inline]
    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Cos(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Rc<Vec<usize>>),
    HeadDot(Var, Var, usize),
    SegSoftmax(Var, Rc<Segments>),
    SegWeightedSum(Var, Var, Rc<Segments>, usize),
    SegMax(Var, Vec<usize>),
    MulConst(Var, Tensor),
    Bce(Var, Vec<f64>),
    SumAll(Var),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of every tape node after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input; its gradient is available from [`Gradients`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The current value of a parameter. Repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.shared_value(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .expect("matmul shape mismatch");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// `x + 1ᵀ b` for a row vector `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        assert_eq!(bv.shape(), (1, xv.cols()), "add_row shape mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddRow(x, b), ng)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(out, Op::Affine(x, scale), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.ng(x);
        self.push(out, Op::LeakyRelu(x, slope), ng)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::cos);
        let ng = self.ng(x);
        self.push(out, Op::Cos(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&vals).expect("concat_cols shape mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Stacks matrices of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(if cols == 0 { 0 } else { rows }, cols, data).unwrap();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice_cols(start, end);
        let ng = self.ng(x);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    pub fn gather_rows(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Var {
        let out = self.value(x).gather_rows(&idx);
        let ng = self.ng(x);
        self.push(out, Op::Gather(x, idx), ng)
    }

    /// Per-head row-wise dot products: `out[n, h] = ⟨a[n, h·D..], b[n', h·D..]⟩`
    /// where `n' = n`, or `0` when `b` has a single row.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.cols(), bv.cols(), "head_dot width mismatch");
        assert!(bv.rows() == 1 || bv.rows() == av.rows(), "head_dot rows mismatch");
        assert_eq!(av.cols() % heads, 0);
        let d = av.cols() / heads;
        let mut out = Tensor::zeros(av.rows(), heads);
        for n in 0..av.rows() {
            let ar = av.row(n);
            let br = bv.row(if bv.rows() == 1 { 0 } else { n });
            for h in 0..heads {
                out.set(n, h, dot(&ar[h * d..(h + 1) * d], &br[h * d..(h + 1) * d]));
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::HeadDot(a, b, heads), ng)
    }

    /// Column-wise softmax inside each segment of rows.
    pub fn segment_softmax(&mut self, x: Var, seg: Rc<Segments>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), seg.total());
        let cols = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), cols);
        for s in 0..seg.len() {
            let r = seg.range(s);
            if r.is_empty() {
                continue;
            }
            for c in 0..cols {
                let m = r.clone().map(|e| xv.get(e, c)).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for e in r.clone() {
                    let v = (xv.get(e, c) - m).exp();
                    out.set(e, c, v);
                    z += v;
                }
                for e in r.clone() {
                    out.set(e, c, out.get(e, c) / z);
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SegSoftmax(x, seg), ng)
    }

    /// `out[s, h·D + d] = Σ_{e ∈ s} w[e, h] · v[e, h·D + d]`; empty segments give zero rows.
    pub fn segment_weighted_sum(
        &mut self,
        values: Var,
        weights: Var,
        seg: Rc<Segments>,
        heads: usize,
    ) -> Var {
        let vv = self.value(values);
        let wv = self.value(weights);
        assert_eq!(vv.rows(), seg.total());
        assert_eq!(wv.shape(), (seg.total(), heads));
        let d = vv.cols() / heads;
        let mut out = Tensor::zeros(seg.len(), vv.cols());
        for s in 0..seg.len() {
            let o = out.row_mut(s);
            for e in seg.range(s) {
                let vr = vv.row(e);
                for h in 0..heads {
                    let w = wv.get(e, h);
                    for (ov, &x) in o[h * d..(h + 1) * d].iter_mut().zip(&vr[h * d..(h + 1) * d]) {
                        *ov += w * x;
                    }
                }
            }
        }
        let ng = self.ng(values) || self.ng(weights);
        self.push(out, Op::SegWeightedSum(values, weights, seg, heads), ng)
    }

    /// Column-wise maximum inside each segment; empty segments give zero rows.
    pub fn segment_max(&mut self, x: Var, seg: &Segments) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = Tensor::zeros(seg.len(), cols);
        let mut arg = vec![usize::MAX; seg.len() * cols];
        for s in 0..seg.len() {
            for c in 0..cols {
                let mut best: Option<(usize, f64)> = None;
                for e in seg.range(s) {
                    let v = xv.get(e, c);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((e, v));
                    }
                }
                if let Some((e, v)) = best {
                    out.set(s, c, v);
                    arg[s * cols + c] = e;
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SegMax(x, arg), ng)
    }

    /// Element-wise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let out = self.value(x).zip_map(&c, |a, b| a * b);
        let ng = self.ng(x);
        self.push(out, Op::MulConst(x, c), ng)
    }

    /// Mean binary cross-entropy of logits `z` (a column) against `labels`.
    pub fn bce_with_logits(&mut self, z: Var, labels: Vec<f64>) -> Var {
        let zv = self.value(z);
        assert_eq!(zv.shape(), (labels.len(), 1));
        let n = labels.len();
        let total: f64 = zv
            .data()
            .iter()
            .zip(&labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        let ng = self.ng(z);
        self.push(Tensor::filled(1, 1, loss), Op::Bce(z, labels), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::filled(1, 1, s), Op::SumAll(x), ng)
    }

    /// Back-propagates from the scalar `root`, adding parameter gradients
    /// into `store`.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(val(*b)).unwrap());
                }
                if self.ng(*b) {
                    acc(*b, val(*a).t_matmul(g).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Affine(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Relu(x) => acc(*x, g.zip_map(val(*x), |gv, v| if v > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(x, s) => {
                acc(*x, g.zip_map(val(*x), |gv, v| if v > 0.0 { gv } else { s * gv }))
            }
            Op::Cos(x) => acc(*x, g.zip_map(val(*x), |gv, v| -gv * v.sin())),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.ng(p) {
                        acc(p, g.slice_cols(off, off + w));
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = val(p);
                    if self.ng(p) {
                        let slice = g.data()[off * pv.cols()..(off + pv.rows()) * pv.cols()].to_vec();
                        acc(p, Tensor::from_vec(pv.rows(), pv.cols(), slice).unwrap());
                    }
                    off += pv.rows();
                }
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, gx);
            }
            Op::Gather(x, idx) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (o, &i) in idx.iter().enumerate() {
                    for (a, &b) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                        *a += b;
                    }
                }
                acc(*x, gx);
            }
            Op::HeadDot(a, b, heads) => {
                let (av, bv) = (val(*a), val(*b));
                let d = av.cols() / heads;
                let bcast = bv.rows() == 1 && av.rows() != 1;
                if self.ng(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for n in 0..av.rows() {
                        let br = bv.row(if bcast { 0 } else { n });
                        let gr = ga.row_mut(n);
                        for h in 0..*heads {
                            let gh = g.get(n, h);
                            for k in h * d..(h + 1) * d {
                                gr[k] += gh * br[k];
                            }
                        }
                    }
                    acc(*a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    for n in 0..av.rows() {
                        let ar = av.row(n);
                        let gr = gb.row_mut(if bcast { 0 } else { n });
                        for h in 0..*heads {
                            let gh = g.get(n, h);
                            for k in h * d..(h + 1) * d {
                                gr[k] += gh * ar[k];
                            }
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::SegSoftmax(x, seg) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for s in 0..seg.len() {
                    for c in 0..y.cols() {
                        let inner: f64 = seg.range(s).map(|e| g.get(e, c) * y.get(e, c)).sum();
                        for e in seg.range(s) {
                            gx.set(e, c, y.get(e, c) * (g.get(e, c) - inner));
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::SegWeightedSum(values, weights, seg, heads) => {
                let (vv, wv) = (val(*values), val(*weights));
                let d = vv.cols() / heads;
                if self.ng(*values) {
                    let mut gv = Tensor::zeros(vv.rows(), vv.cols());
                    for s in 0..seg.len() {
                        let gs = g.row(s);
                        for e in seg.range(s) {
                            let row = gv.row_mut(e);
                            for h in 0..*heads {
                                let w = wv.get(e, h);
                                for k in h * d..(h + 1) * d {
                                    row[k] += w * gs[k];
                                }
                            }
                        }
                    }
                    acc(*values, gv);
                }
                if self.ng(*weights) {
                    let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                    for s in 0..seg.len() {
                        let gs = g.row(s);
                        for e in seg.range(s) {
                            let vr = vv.row(e);
                            for h in 0..*heads {
                                gw.set(e, h, dot(&gs[h * d..(h + 1) * d], &vr[h * d..(h + 1) * d]));
                            }
                        }
                    }
                    acc(*weights, gw);
                }
            }
            Op::SegMax(x, arg) => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros(xv.rows(), cols);
                for (k, &e) in arg.iter().enumerate() {
                    if e != usize::MAX {
                        let (s, c) = (k / cols, k % cols);
                        gx.set(e, c, gx.get(e, c) + g.get(s, c));
                    }
                }
                acc(*x, gx);
            }
            Op::MulConst(x, c) => acc(*x, g.zip_map(c, |a, b| a * b)),
            Op::Bce(z, labels) => {
                let zv = val(*z);
                let n = labels.len().max(1) as f64;
                let scale = g.get(0, 0) / n;
                let data = zv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&x, &y)| scale * (sigmoid(x) - y))
                    .collect();
                acc(*z, Tensor::from_vec(zv.rows(), 1, data).unwrap());
            }
            Op::SumAll(x) => {
                let xv = val(*x);
                acc(*x, Tensor::filled(xv.rows(), xv.cols(), g.get(0, 0)));
            }
        }
    }
}
