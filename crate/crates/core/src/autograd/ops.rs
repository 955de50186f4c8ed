//! Forward definitions of the differentiable ops.

use super::tape::{bn_dims, permute_map, Op, Var};
use super::tensor::{broadcast_map, broadcast_shape, split_axis, Tensor};
use crate::error::{Error, Result};

pub(crate) const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub(crate) const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// Batch-norm mode: batch statistics, or frozen running statistics.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel `(mean, biased variance)` of a train-mode batch norm.
pub type ChannelStats = (Vec<f64>, Vec<f64>);

// The arithmetic methods return `Result` (shapes are checked at run time), so
// they cannot be the `std::ops` traits.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        self.tape
            .push(Tensor::new(v.shape(), data)?, op, &[self.id])
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
        let data = if a.shape() == b.shape() {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let ma = broadcast_map(a.shape(), &shape);
            let mb = broadcast_map(b.shape(), &shape);
            ma.iter()
                .zip(&mb)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect()
        };
        self.tape
            .push(Tensor::new(&shape, data)?, op, &[self.id, other.id])
    }

    /// Broadcasting sum.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    /// Broadcasting elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    /// Elementwise maximum. On ties the gradient goes to `self`.
    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.binary(other, "maximum", Op::Max(self.id, other.id), f64::max)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() && a.data().iter().zip(b.data()).any(|(x, y)| x == y) {
            self.tape.note_tie();
        }
        Ok(out)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn selu(self) -> Result<Var<'t>> {
        self.unary(Op::Selu(self.id), |x| {
            if x > 0.0 {
                SELU_LAMBDA * x
            } else {
                SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
            }
        })
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a.data()[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b.data()[p * n..(p + 1) * n];
                row.iter_mut().zip(brow).for_each(|(o, bv)| *o += aip * bv);
            }
        }
        self.tape.push(
            Tensor::new(&[m, n], out)?,
            Op::MatMul(self.id, other.id),
            &[self.id, other.id],
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn t(self) -> Result<Var<'t>> {
        let a = self.value();
        if a.ndim() != 2 {
            return Err(Error::shape("transpose", a.shape(), &[]));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        self.tape.push(
            Tensor::new(&[c, r], out)?,
            Op::Transpose(self.id),
            &[self.id],
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let mut seen = vec![false; a.ndim()];
        if axes.len() != a.ndim()
            || axes
                .iter()
                .any(|&x| x >= a.ndim() || std::mem::replace(&mut seen[x], true))
        {
            return Err(Error::shape("permute", a.shape(), axes));
        }
        let map = permute_map(a.shape(), axes);
        let shape: Vec<usize> = axes.iter().map(|&x| a.shape()[x]).collect();
        let data = map.iter().map(|&i| a.data()[i]).collect();
        self.tape.push(
            Tensor::new(&shape, data)?,
            Op::Permute(self.id, axes.to_vec()),
            &[self.id],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let t = (*a).clone().reshaped(shape)?;
        self.tape.push(t, Op::Reshape(self.id), &[self.id])
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(op, &shape, &[axis]));
        }
        Ok(shape)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "softmax")?;
        let a = self.value();
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out = vec![0.0; a.numel()];
        for o in 0..outer {
            for q in 0..inner {
                let at = |j: usize| (o * n + j) * inner + q;
                let m = (0..n)
                    .map(|j| a.data()[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..n {
                    let e = (a.data()[at(j)] - m).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    out[at(j)] /= s;
                }
            }
        }
        self.tape.push(
            Tensor::new(&shape, out)?,
            Op::Softmax(self.id, axis),
            &[self.id],
        )
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "log_softmax")?;
        let a = self.value();
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out = vec![0.0; a.numel()];
        for o in 0..outer {
            for q in 0..inner {
                let at = |j: usize| (o * n + j) * inner + q;
                let m = (0..n)
                    .map(|j| a.data()[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = m
                    + (0..n)
                        .map(|j| (a.data()[at(j)] - m).exp())
                        .sum::<f64>()
                        .ln();
                for j in 0..n {
                    out[at(j)] = a.data()[at(j)] - lse;
                }
            }
        }
        self.tape.push(
            Tensor::new(&shape, out)?,
            Op::LogSoftmax(self.id, axis),
            &[self.id],
        )
    }

    fn reduce(self, axis: usize, name: &'static str) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
        let shape = self.check_axis(axis, name)?;
        let a = self.value();
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut sums = vec![0.0; outer * inner];
        let mut maxes = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for q in 0..inner {
                    let v = a.data()[(o * n + j) * inner + q];
                    let k = o * inner + q;
                    sums[k] += v;
                    if v > maxes[k] {
                        maxes[k] = v;
                        argmax[k] = j;
                    } else if v == maxes[k] && name == "max" {
                        self.tape.note_tie();
                    }
                }
            }
        }
        let vals = if name == "max" { maxes } else { sums };
        Ok((out_shape, vals, argmax))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(self, axis: usize) -> Result<Var<'t>> {
        let (shape, vals, _) = self.reduce(axis, "sum")?;
        self.tape.push(
            Tensor::new(&shape, vals)?,
            Op::Sum(self.id, axis),
            &[self.id],
        )
    }

    pub fn mean(self, axis: usize) -> Result<Var<'t>> {
        let n = self.check_axis(axis, "mean")?[axis] as f64;
        let (shape, vals, _) = self.reduce(axis, "sum")?;
        let vals = vals.into_iter().map(|v| v / n).collect();
        self.tape.push(
            Tensor::new(&shape, vals)?,
            Op::Mean(self.id, axis),
            &[self.id],
        )
    }

    /// Max over `axis`; backward routes to the first maximal element.
    pub fn max(self, axis: usize) -> Result<Var<'t>> {
        let (shape, vals, argmax) = self.reduce(axis, "max")?;
        self.tape.push(
            Tensor::new(&shape, vals)?,
            Op::MaxAxis(self.id, axis, argmax),
            &[self.id],
        )
    }

    pub fn sum_all(self) -> Result<Var<'t>> {
        let s = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean_all(self) -> Result<Var<'t>> {
        let n = self.value().numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    /// Rows `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "slice")?;
        if start >= end || end > shape[axis] {
            return Err(Error::shape("slice", &shape, &[start, end]));
        }
        let a = self.value();
        let (outer, n_src, inner) = split_axis(&shape, axis);
        let n = end - start;
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            out.extend_from_slice(
                &a.data()[(o * n_src + start) * inner..(o * n_src + end) * inner],
            );
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        self.tape.push(
            Tensor::new(&out_shape, out)?,
            Op::Slice(self.id, axis, start),
            &[self.id],
        )
    }

    /// Gathers rows (first axis) in the given order.
    pub fn index_select(self, rows: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.is_empty() || rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::shape("index_select", &shape, rows));
        }
        let a = self.value();
        let inner: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            out.extend_from_slice(&a.data()[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        self.tape.push(
            Tensor::new(&out_shape, out)?,
            Op::IndexSelect(self.id, rows.to_vec()),
            &[self.id],
        )
    }

    /// 1-D convolution (cross-correlation) of `[B, C_in, L]` with
    /// `[C_out, C_in, K]`, no bias.
    pub fn conv1d(self, weight: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        if x.ndim() != 3 || w.ndim() != 3 || x.shape()[1] != w.shape()[1] || stride == 0 {
            return Err(Error::shape("conv1d", x.shape(), w.shape()));
        }
        let (b, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        if len + 2 * padding < k {
            return Err(Error::shape("conv1d", x.shape(), w.shape()));
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let mut out = vec![0.0; b * cout * lout];
        for bi in 0..b {
            for co in 0..cout {
                let orow = &mut out[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                for ci in 0..cin {
                    let xrow = &x.data()[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                    for kk in 0..k {
                        let wv = w.data()[(co * cin + ci) * k + kk];
                        for (t, o) in orow.iter_mut().enumerate() {
                            let pos = (t * stride + kk) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < len {
                                *o += wv * xrow[pos as usize];
                            }
                        }
                    }
                }
            }
        }
        self.tape.push(
            Tensor::new(&[b, cout, lout], out)?,
            Op::Conv1d {
                x: self.id,
                w: weight.id,
                stride,
                padding,
            },
            &[self.id, weight.id],
        )
    }

    /// Per-channel normalization of `[B, C, L]` (or `[N, C]`) over every axis
    /// but the channel axis, followed by the affine `gamma * xhat + beta`.
    ///
    /// In train mode the batch mean and biased variance are returned so the
    /// caller can update its running statistics.
    pub fn batchnorm1d(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var<'t>, Option<ChannelStats>)> {
        let x = self.value();
        if !(x.ndim() == 2 || x.ndim() == 3) {
            return Err(Error::shape("batchnorm1d", x.shape(), &gamma.shape()));
        }
        let (b, c, l) = bn_dims(x.shape());
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("batchnorm1d", x.shape(), &gamma.shape()));
        }
        let idx = |bi: usize, ci: usize, li: usize| (bi * c + ci) * l + li;
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let m = (b * l) as f64;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (ci, mu) in mean.iter_mut().enumerate() {
                    for bi in 0..b {
                        for li in 0..l {
                            *mu += x.data()[idx(bi, ci, li)];
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for (ci, (s2, mu)) in var.iter_mut().zip(&mean).enumerate() {
                    for bi in 0..b {
                        for li in 0..l {
                            let d = x.data()[idx(bi, ci, li)] - mu;
                            *s2 += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batchnorm1d", x.shape(), &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gv, bv) = (gamma.value(), beta.value());
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    let i = idx(bi, ci, li);
                    xhat[i] = (x.data()[i] - mean[ci]) * inv_std[ci];
                    out[i] = gv.data()[ci] * xhat[i] + bv.data()[ci];
                }
            }
        }
        let y = self.tape.push(
            Tensor::new(x.shape(), out)?,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                train,
            },
            &[self.id, gamma.id, beta.id],
        )?;
        Ok((y, train.then_some((mean, var))))
    }
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", &[], &[]))?;
    let tape = first.tape;
    let shapes: Vec<Vec<usize>> = parts.iter().map(Var::shape).collect();
    let base = &shapes[0];
    if axis >= base.len() {
        return Err(Error::shape("concat", base, &[axis]));
    }
    for s in &shapes[1..] {
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(base)
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", base, s));
        }
    }
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let (outer, _, inner) = split_axis(base, axis);
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, s) in values.iter().zip(&shapes) {
            let n = s[axis];
            out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push(
        Tensor::new(&out_shape, out)?,
        Op::Concat(ids.clone(), axis),
        &ids,
    )
}
