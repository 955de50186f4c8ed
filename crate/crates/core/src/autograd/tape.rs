use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::tensor::{broadcast_map, split_axis, strides, Tensor};
use crate::error::{Error, Result};

/// Recorded operation with the inputs and saved state its backward needs.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Max(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Selu(usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    Sum(usize, usize),
    Mean(usize, usize),
    MaxAxis(usize, usize, Vec<usize>),
    SumAll(usize),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    IndexSelect(usize, Vec<usize>),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
}

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Define-by-run record of one forward pass.
///
/// Every op appends exactly one node, so node ids are already a topological
/// order. A tape is single-threaded; run independent passes on independent
/// tapes.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    consumed: Cell<bool>,
    ties: Cell<bool>,
    check_finite: bool,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Finite checks follow `debug_assertions`.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            ties: Cell::new(false),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    fn leaf(&self, t: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {op:?}")));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn note_tie(&self) {
        self.ties.set(true);
    }

    /// Whether any max-type op met an exact tie (a non-differentiable point).
    pub fn saw_ties(&self) -> bool {
        self.ties.get()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    /// Drops accumulated gradients so `backward` may run again.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
        self.consumed.set(false);
    }

    /// Gradient accumulated on a leaf by the last `backward`.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        Tensor::new(&shape, g.clone()).ok()
    }

    /// Reverse-mode sweep from a scalar. Gradients add across fan-out.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let nodes: Ref<'_, Vec<Node>> = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::shape("backward", nodes[loss.id].value.shape(), &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_op(&nodes, id, &g, &mut grads);
        }
        *self.grads.borrow_mut() = grads;
        self.consumed.set(true);
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut [f64]> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn backward_op(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) {
                -1.0
            } else {
                1.0
            };
            for (src, s) in [(*a, 1.0), (*b, sign)] {
                if let Some(ga) = acc(grads, nodes, src) {
                    reduce_into(ga, val(src).shape(), out.shape(), g, |_, gi| s * gi);
                }
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ma = broadcast_map(va.shape(), out.shape());
            let mb = broadcast_map(vb.shape(), out.shape());
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[ma[i]] += g[i] * vb.data()[mb[i]];
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for i in 0..g.len() {
                    gb[mb[i]] += g[i] * va.data()[ma[i]];
                }
            }
        }
        Op::Max(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ma = broadcast_map(va.shape(), out.shape());
            let mb = broadcast_map(vb.shape(), out.shape());
            let first: Vec<bool> = (0..g.len())
                .map(|i| va.data()[ma[i]] >= vb.data()[mb[i]])
                .collect();
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    if first[i] {
                        ga[ma[i]] += g[i];
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for i in 0..g.len() {
                    if !first[i] {
                        gb[mb[i]] += g[i];
                    }
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += c * gi);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            if let Some(ga) = acc(grads, nodes, *a) {
                // dA = G B^T
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * vb.data()[p * n + j];
                        }
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                // dB = A^T G
                for i in 0..m {
                    for p in 0..k {
                        let aip = va.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let row = &g[i * n..(i + 1) * n];
                        let dst = &mut gb[p * n..(p + 1) * n];
                        dst.iter_mut().zip(row).for_each(|(d, gv)| *d += aip * gv);
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        Op::Permute(a, axes) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                let map = permute_map(val(*a).shape(), axes);
                for (i, &src) in map.iter().enumerate() {
                    ga[src] += g[i];
                }
            }
        }
        Op::Exp(a) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * out.data()[i];
                }
            }
        }
        Op::Log(a) => {
            let va = val(*a);
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] / va.data()[i];
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    let y = out.data()[i];
                    ga[i] += g[i] * y * (1.0 - y);
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let va = val(*a);
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    ga[i] += if va.data()[i] > 0.0 {
                        g[i]
                    } else {
                        slope * g[i]
                    };
                }
            }
        }
        Op::Selu(a) => {
            let va = val(*a);
            if let Some(ga) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    let x = va.data()[i];
                    let d = if x > 0.0 {
                        super::ops::SELU_LAMBDA
                    } else {
                        super::ops::SELU_LAMBDA * super::ops::SELU_ALPHA * x.exp()
                    };
                    ga[i] += g[i] * d;
                }
            }
        }
        Op::Softmax(a, axis) => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            if let Some(ga) = acc(grads, nodes, *a) {
                for o in 0..outer {
                    for q in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + q;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            ga[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::LogSoftmax(a, axis) => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            if let Some(ga) = acc(grads, nodes, *a) {
                for o in 0..outer {
                    for q in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + q;
                        let gsum: f64 = (0..n).map(|j| g[at(j)]).sum();
                        for j in 0..n {
                            ga[at(j)] += g[at(j)] - y[at(j)].exp() * gsum;
                        }
                    }
                }
            }
        }
        Op::Sum(a, axis) | Op::Mean(a, axis) => {
            let (outer, n, inner) = split_axis(val(*a).shape(), *axis);
            let scale = if matches!(nodes[id].op, Op::Mean(..)) {
                1.0 / n as f64
            } else {
                1.0
            };
            if let Some(ga) = acc(grads, nodes, *a) {
                for o in 0..outer {
                    for j in 0..n {
                        for q in 0..inner {
                            ga[(o * n + j) * inner + q] += scale * g[o * inner + q];
                        }
                    }
                }
            }
        }
        Op::MaxAxis(a, axis, argmax) => {
            let (_, n, inner) = split_axis(val(*a).shape(), *axis);
            if let Some(ga) = acc(grads, nodes, *a) {
                for (k, &j) in argmax.iter().enumerate() {
                    let (o, q) = (k / inner, k % inner);
                    ga[(o * n + j) * inner + q] += g[k];
                }
            }
        }
        Op::SumAll(a) => {
            if let Some(ga) = acc(grads, nodes, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::Concat(inputs, axis) => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &src in inputs {
                let n = val(src).shape()[*axis];
                if let Some(gs) = acc(grads, nodes, src) {
                    for o in 0..outer {
                        for j in 0..n {
                            for q in 0..inner {
                                gs[(o * n + j) * inner + q] +=
                                    g[(o * total + offset + j) * inner + q];
                            }
                        }
                    }
                }
                offset += n;
            }
        }
        Op::Slice(a, axis, start) => {
            let (outer, n_src, inner) = split_axis(val(*a).shape(), *axis);
            let n = out.shape()[*axis];
            if let Some(ga) = acc(grads, nodes, *a) {
                for o in 0..outer {
                    for j in 0..n {
                        for q in 0..inner {
                            ga[(o * n_src + start + j) * inner + q] += g[(o * n + j) * inner + q];
                        }
                    }
                }
            }
        }
        Op::IndexSelect(a, rows) => {
            let inner: usize = out.shape()[1..].iter().product();
            if let Some(ga) = acc(grads, nodes, *a) {
                for (k, &r) in rows.iter().enumerate() {
                    for q in 0..inner {
                        ga[r * inner + q] += g[k * inner + q];
                    }
                }
            }
        }
        Op::Conv1d {
            x,
            w,
            stride,
            padding,
        } => {
            let (vx, vw) = (val(*x), val(*w));
            let (b, cin, len) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
            let (cout, _, k) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
            let lout = out.shape()[2];
            let (stride, padding) = (*stride as isize, *padding as isize);
            let xd = vx.data();
            let wd = vw.data();
            let mut gx = acc(grads, nodes, *x).map(|s| s.to_vec());
            let mut gw = acc(grads, nodes, *w).map(|s| s.to_vec());
            for bi in 0..b {
                for co in 0..cout {
                    let grow = &g[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                    for ci in 0..cin {
                        let xrow = &xd[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                        for kk in 0..k {
                            let widx = (co * cin + ci) * k + kk;
                            let wv = wd[widx];
                            let mut wacc = 0.0;
                            for (t, &gv) in grow.iter().enumerate() {
                                let pos = t as isize * stride + kk as isize - padding;
                                if pos < 0 || pos >= len as isize {
                                    continue;
                                }
                                let pos = pos as usize;
                                wacc += gv * xrow[pos];
                                if let Some(gx) = gx.as_mut() {
                                    gx[(bi * cin + ci) * len + pos] += gv * wv;
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[widx] += wacc;
                            }
                        }
                    }
                }
            }
            if let Some(v) = gx {
                acc(grads, nodes, *x)
                    .expect("requires grad")
                    .copy_from_slice(&v);
            }
            if let Some(v) = gw {
                acc(grads, nodes, *w)
                    .expect("requires grad")
                    .copy_from_slice(&v);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let shape = val(*x).shape().to_vec();
            let (b, c, l) = bn_dims(&shape);
            let m = (b * l) as f64;
            let gam = val(*gamma);
            let idx = |bi: usize, ci: usize, li: usize| (bi * c + ci) * l + li;
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    for li in 0..l {
                        let i = idx(bi, ci, li);
                        sum_g[ci] += g[i];
                        sum_gx[ci] += g[i] * xhat[i];
                    }
                }
            }
            if let Some(gg) = acc(grads, nodes, *gamma) {
                gg.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s);
            }
            if let Some(gb) = acc(grads, nodes, *beta) {
                gb.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s);
            }
            if let Some(gx) = acc(grads, nodes, *x) {
                for bi in 0..b {
                    for ci in 0..c {
                        let k = gam.data()[ci] * inv_std[ci];
                        for li in 0..l {
                            let i = idx(bi, ci, li);
                            gx[i] += if *train {
                                k * (g[i] - sum_g[ci] / m - xhat[i] * sum_gx[ci] / m)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Sums `g` (shaped `out`) back onto a broadcast source of shape `src`.
fn reduce_into(
    dst: &mut [f64],
    src: &[usize],
    out: &[usize],
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    if src == out {
        for (i, (d, gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, *gi);
        }
        return;
    }
    let map = broadcast_map(src, out);
    for (i, &j) in map.iter().enumerate() {
        dst[j] += f(i, g[i]);
    }
}

/// For each flat index of the permuted output, the flat index in the input.
pub(crate) fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = shape.iter().product();
    let n = axes.len();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..n).rev() {
            idx[d] += 1;
            cur += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            cur -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// `(batch, channels, length)` for `[B, C, L]` or `[N, C]` inputs.
pub(crate) fn bn_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        2 => (shape[0], shape[1], 1),
        _ => (shape[0], shape[1], shape[2]),
    }
}
