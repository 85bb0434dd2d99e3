//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its value; `backward` walks the tape in
//! reverse and accumulates vector-Jacobian products into the parents. Leaves
//! that were created from a [`ParamStore`] entry route their gradient back to
//! that parameter.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding added to each end of the time axis by a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Pad so that `out_len == ceil(in_len / stride)`; the extra element of an
    /// odd total goes to the right.
    Same,
    Explicit(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub in_len: usize,
    pub out_len: usize,
}

impl ConvGeometry {
    pub fn new(
        in_len: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || dilation == 0 {
            return Err(Error::invalid(format!(
                "conv1d kernel/stride/dilation must be positive, got {kernel}/{stride}/{dilation}"
            )));
        }
        if in_len == 0 {
            return Err(Error::shape("conv1d", "empty time axis"));
        }
        let span = dilation * (kernel - 1) + 1;
        let (pad_left, pad_right) = match padding {
            Padding::Same => {
                let out = math::ceil_div(in_len, stride);
                let total = ((out - 1) * stride + span).saturating_sub(in_len);
                (total / 2, total - total / 2)
            }
            Padding::Explicit(l, r) => (l, r),
        };
        let padded = in_len + pad_left + pad_right;
        if padded < span {
            return Err(Error::shape(
                "conv1d",
                format!("padded length {padded} shorter than kernel span {span}"),
            ));
        }
        let out_len = (padded - span) / stride + 1;
        Ok(Self {
            kernel,
            stride,
            dilation,
            pad_left,
            pad_right,
            in_len,
            out_len,
        })
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanTime(Var),
    BroadcastTime(Var),
    Reshape(Var),
    SliceLast { input: Var, start: usize },
    ConcatLast(Vec<Var>),
    CropTime { input: Var, start: usize },
    Upsample { input: Var, factor: usize },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    LayerNorm { input: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    SmoothL1 { pred: Var, target: Var, threshold: f64 },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    GatherRows { table: Var, indices: Vec<usize> },
    StraightThrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Outcome of a backward pass over a parameter store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BackwardReport {
    /// Parameters the loss does not depend on; their gradient was zeroed.
    pub disconnected: Vec<String>,
}

/// A computation tape. Build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<String>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(name.to_string());
        }
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First op that produced a NaN or infinity, if any.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn check_finite(&self) -> Result<()> {
        match &self.fault {
            Some(op) => Err(Error::NonFinite { op: op.clone() }),
            None => Ok(()),
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, "param");
        self.nodes[v.0].param = Some(id);
        v
    }

    /// A constant copy of `v`: its value, with the gradient path cut.
    pub fn stop_grad(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), "mul"))
    }

    fn check_suffix(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, format!("cannot broadcast {sb:?} over {sa:?}")));
        }
        Ok(())
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix(a, b, "add_broadcast")?;
        let tb = self.value(b).data();
        let n = tb.len();
        let ta = self.value(a);
        let data = ta.data().iter().enumerate().map(|(i, x)| x + tb[i % n]).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(t, Op::AddBroadcast(a, b), "add_broadcast"))
    }

    /// `a * b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix(a, b, "mul_broadcast")?;
        let tb = self.value(b).data();
        let n = tb.len();
        let ta = self.value(a);
        let data = ta.data().iter().enumerate().map(|(i, x)| x * tb[i % n]).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(t, Op::MulBroadcast(a, b), "mul_broadcast"))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.unary(a, |x| x * s);
        self.push(t, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.unary(a, |x| x + s);
        self.push(t, Op::AddScalar(a), "add_scalar")
    }

    /// `a[..., k] @ w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        if tw.shape().len() != 2 || ta.last_dim() != tw.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} @ {:?}", ta.shape(), tw.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), tw.shape()[0], tw.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tw.data(), false, &mut out, false);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::MatMul(a, w), "matmul"))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, math::tanh);
        self.push(t, Op::Tanh(a), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.unary(a, math::exp);
        self.push(t, Op::Exp(a), "exp")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.unary(a, math::softplus);
        self.push(t, Op::Softplus(a), "softplus")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x * x);
        self.push(t, Op::Square(a), "square")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Sum over the last axis; a 1-D input reduces to shape `[1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let data: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let mut shape = t.shape()[..t.shape().len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::from_parts(shape, data);
        self.push(t, Op::SumLast(a), "sum_last")
    }

    fn btc(&self, a: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape(a) {
            [b, l, c] => Ok((b, l, c)),
            ref s => Err(Error::shape(op, format!("expected [batch, time, channels], got {s:?}"))),
        }
    }

    /// `[B, L, C] -> [B, C]`, averaging over time.
    pub fn mean_time(&mut self, a: Var) -> Result<Var> {
        let (b, l, c) = self.btc(a, "mean_time")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for t in 0..l {
                let row = &src[(bi * l + t) * c..(bi * l + t + 1) * c];
                for (o, x) in out[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        let inv = 1.0 / l as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(Tensor::from_parts(vec![b, c], out), Op::MeanTime(a), "mean_time"))
    }

    /// `[B, C] -> [B, len, C]`, repeating each row along a new time axis.
    pub fn broadcast_time(&mut self, a: Var, len: usize) -> Result<Var> {
        let t = self.value(a);
        let [b, c] = *t.shape() else {
            return Err(Error::shape("broadcast_time", format!("expected [batch, channels], got {:?}", t.shape())));
        };
        let mut out = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            for _ in 0..len {
                out.extend_from_slice(&t.data()[bi * c..(bi + 1) * c]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, len, c], out), Op::BroadcastTime(a), "broadcast_time"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), "reshape"))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_last", format!("{start}+{len} > {c}")));
        }
        let mut out = Vec::with_capacity(t.rows() * len);
        for row in t.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor::from_parts(shape, out), Op::SliceLast { input: a, start }, "slice_last"))
    }

    /// Concatenation along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_last inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", format!("{lead:?} vs {s:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = self.value(first).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ConcatLast(parts.to_vec()), "concat_last"))
    }

    /// Frames `start..start+len` of a `[B, L, C]` tensor.
    pub fn crop_time(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (b, l, c) = self.btc(a, "crop_time")?;
        if len == 0 || start + len > l {
            return Err(Error::shape("crop_time", format!("{start}+{len} > {l}")));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            out.extend_from_slice(&src[(bi * l + start) * c..(bi * l + start + len) * c]);
        }
        Ok(self.push(Tensor::from_parts(vec![b, len, c], out), Op::CropTime { input: a, start }, "crop_time"))
    }

    /// Nearest-neighbour upsampling along time: each frame repeated `factor` times.
    pub fn upsample_nearest(&mut self, a: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let (b, l, c) = self.btc(a, "upsample_nearest")?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * l * factor * c);
        for row in src.chunks(c) {
            for _ in 0..factor {
                out.extend_from_slice(row);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, l * factor, c], out),
            Op::Upsample { input: a, factor },
            "upsample_nearest",
        ))
    }

    /// 1-D convolution over time. `input: [B, L, C_in]`,
    /// `weight: [kernel * C_in, C_out]` (tap-major rows), `bias: [C_out]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (b, l, cin) = self.btc(input, "conv1d")?;
        let geom = ConvGeometry::new(l, kernel, stride, dilation, padding)?;
        let w = self.value(weight);
        if w.shape().len() != 2 || w.shape()[0] != kernel * cin {
            return Err(Error::shape(
                "conv1d",
                format!("weight {:?} for kernel {kernel} and {cin} input channels", w.shape()),
            ));
        }
        let cout = w.shape()[1];
        if let Some(bv) = bias {
            if self.shape(bv) != [cout] {
                return Err(Error::shape("conv1d", format!("bias {:?} vs {cout}", self.shape(bv))));
            }
        }
        let kc = kernel * cin;
        let lo = geom.out_len;
        let src = self.value(input).data();
        let mut cols = vec![0.0; b * lo * kc];
        for bi in 0..b {
            for o in 0..lo {
                let dst = &mut cols[(bi * lo + o) * kc..(bi * lo + o + 1) * kc];
                for tap in 0..kernel {
                    let p = (o * stride + tap * dilation) as isize - geom.pad_left as isize;
                    if p >= 0 && (p as usize) < l {
                        let p = p as usize;
                        dst[tap * cin..(tap + 1) * cin]
                            .copy_from_slice(&src[(bi * l + p) * cin..(bi * l + p + 1) * cin]);
                    }
                }
            }
        }
        let mut out = vec![0.0; b * lo * cout];
        gemm(b * lo, kc, cout, &cols, false, w.data(), false, &mut out, false);
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for row in out.chunks_mut(cout) {
                for (x, y) in row.iter_mut().zip(bd) {
                    *x += y;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, lo, cout], out),
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            "conv1d",
        ))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let mut xhat = Vec::with_capacity(t.len());
        let mut rstd = Vec::with_capacity(t.rows());
        for row in t.data().chunks(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let r = 1.0 / math::sqrt(var + eps);
            rstd.push(r);
            xhat.extend(row.iter().map(|x| (x - mu) * r));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), xhat.clone());
        self.push(out, Op::LayerNorm { input: a, xhat, rstd }, "layer_norm")
    }

    /// Scaled dot-product attention over `[B, L, D]` projections split into
    /// `heads` contiguous column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (b, l, d) = self.btc(q, "attention")?;
        if self.shape(k) != [b, l, d] || self.shape(v) != [b, l, d] {
            return Err(Error::shape("attention", "q, k, v shapes differ"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!("{d} channels not divisible into {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; b * heads * l * l];
        let mut out = vec![0.0; b * l * d];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                let p = &mut probs[(bi * heads + h) * l * l..(bi * heads + h + 1) * l * l];
                for i in 0..l {
                    let qi = &qd[(bi * l + i) * d + off..(bi * l + i) * d + off + dh];
                    let prow = &mut p[i * l..(i + 1) * l];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..l {
                        let kj = &kd[(bi * l + j) * d + off..(bi * l + j) * d + off + dh];
                        let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                        prow[j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for x in prow.iter_mut() {
                        *x = math::exp(*x - max);
                        z += *x;
                    }
                    prow.iter_mut().for_each(|x| *x /= z);
                    let orow = &mut out[(bi * l + i) * d + off..(bi * l + i) * d + off + dh];
                    for j in 0..l {
                        let vj = &vd[(bi * l + j) * d + off..(bi * l + j) * d + off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += prow[j] * x;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, l, d], out),
            Op::Attention { q, k, v, heads, probs },
            "attention",
        ))
    }

    /// Mean over elements of the smooth-L1 (Huber) penalty of `pred - target`.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, threshold: f64) -> Result<Var> {
        if !(threshold > 0.0) {
            return Err(Error::invalid("smooth-L1 threshold must be positive"));
        }
        let (tp, tt) = (self.value(pred), self.value(target));
        same_shape("smooth_l1", tp, tt)?;
        let s: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| {
                let d = (p - t).abs();
                if d < threshold {
                    0.5 * d * d / threshold
                } else {
                    d - 0.5 * threshold
                }
            })
            .sum();
        let v = s / tp.len() as f64;
        Ok(self.push(
            Tensor::scalar(v),
            Op::SmoothL1 {
                pred,
                target,
                threshold,
            },
            "smooth_l1",
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits: [B, C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let c = t.last_dim();
        if t.shape().len() != 2 || t.rows() != labels.len() || labels.iter().any(|&y| y >= c) {
            return Err(Error::shape("cross_entropy", format!("logits {:?}, {} labels", t.shape(), labels.len())));
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut loss = 0.0;
        for (row, &y) in t.data().chunks(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| math::exp(x - max)).sum();
            let lz = math::ln(z) + max;
            loss += lz - row[y];
            probs.extend(row.iter().map(|x| math::exp(x - lz)));
        }
        let v = loss / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(v),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "cross_entropy",
        ))
    }

    /// Rows of `table: [K, d]` selected by `indices`, shaped `[indices.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 || indices.iter().any(|&i| i >= t.shape()[0]) || indices.is_empty() {
            return Err(Error::shape("gather_rows", format!("table {:?}", t.shape())));
        }
        let d = t.shape()[1];
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), d], out),
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            "gather_rows",
        ))
    }

    /// Forward value `replacement`, backward identity into `input`.
    pub fn straight_through(&mut self, input: Var, replacement: Var) -> Result<Var> {
        let (ti, tr) = (self.value(input), self.value(replacement));
        same_shape("straight_through", ti, tr)?;
        let t = tr.clone();
        Ok(self.push(t, Op::StraightThrough(input), "straight_through"))
    }

    /// Gradients of `loss` with respect to every node, indexed by node.
    fn run_backward(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        self.check_finite()?;
        let lt = self.value(loss);
        if lt.shape() != [1] {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Vec<f64>>> = Vec::new();
        leaf_grads.resize_with(loss.0 + 1, || None);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(gout);
                continue;
            }
            self.node_backward(node, &gout, &mut grads);
        }
        Ok(leaf_grads)
    }

    /// Gradients of `loss` with respect to arbitrary leaves `wrt`.
    pub fn grad_wrt(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.run_backward(loss)?;
        Ok(wrt
            .iter()
            .map(|v| {
                let shape = self.shape(*v).to_vec();
                match grads.get(v.0).and_then(|g| g.as_ref()) {
                    Some(g) => Tensor::from_parts(shape, g.clone()),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    /// Writes d(loss)/d(param) into every parameter of `store`. Parameters not
    /// reached from `loss` get a zero gradient and are listed in the report.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<BackwardReport> {
        let grads = self.run_backward(loss)?;
        let mut reached = vec![false; store.len()];
        store.zero_grads();
        for (i, g) in grads.into_iter().enumerate() {
            let (Some(g), Some(pid)) = (g, self.nodes[i].param) else { continue };
            if store.value(pid).shape() != self.nodes[i].value.shape() {
                return Err(Error::shape("backward", "parameter changed shape during the pass"));
            }
            reached[pid.index()] = true;
            for (a, b) in store.grad_mut(pid).data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
        let mut report = BackwardReport::default();
        for (idx, hit) in reached.iter().enumerate() {
            if !*hit {
                let name = store.name(ParamId::from_index(idx)).to_string();
                log::warn!("parameter {name} is not connected to the loss; gradient set to zero");
                report.disconnected.push(name);
            }
        }
        Ok(report)
    }

    fn node_backward(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * vb[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * va[i];
                    }
                });
            }
            Op::AddBroadcast(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| {
                    let n = g.len();
                    for (i, x) in gout.iter().enumerate() {
                        g[i % n] += x;
                    }
                });
            }
            Op::MulBroadcast(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = vb.len();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * vb[i % n];
                    }
                });
                acc(*b, &mut |g| {
                    for (i, x) in gout.iter().enumerate() {
                        g[i % n] += x * va[i];
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += s * y)),
            Op::AddScalar(a) | Op::Reshape(a) | Op::StraightThrough(a) => acc(*a, &mut |g| add_into(g, gout)),
            Op::MatMul(a, w) => {
                let ta = &self.nodes[a.0].value;
                let tw = &self.nodes[w.0].value;
                let (m, k, n) = (ta.rows(), tw.shape()[0], tw.shape()[1]);
                acc(*a, &mut |g| gemm(m, n, k, gout, false, tw.data(), true, g, true));
                acc(*w, &mut |g| gemm(k, m, n, ta.data(), true, gout, false, g, true));
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * y[i];
                    }
                });
            }
            Op::Softplus(a) => {
                let va = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * math::sigmoid(va[i]);
                    }
                });
            }
            Op::Square(a) => {
                let va = val(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += 2.0 * va[i] * gout[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|x| *x += gout[0])),
            Op::Mean(a) => acc(*a, &mut |g| {
                let s = gout[0] / g.len() as f64;
                g.iter_mut().for_each(|x| *x += s);
            }),
            Op::SumLast(a) => {
                let c = self.nodes[a.0].value.last_dim();
                acc(*a, &mut |g| {
                    for (i, x) in g.iter_mut().enumerate() {
                        *x += gout[i / c];
                    }
                });
            }
            Op::MeanTime(a) => {
                let &[b, l, c] = self.nodes[a.0].value.shape() else { unreachable!() };
                let inv = 1.0 / l as f64;
                acc(*a, &mut |g| {
                    for bi in 0..b {
                        for t in 0..l {
                            for ci in 0..c {
                                g[(bi * l + t) * c + ci] += gout[bi * c + ci] * inv;
                            }
                        }
                    }
                });
            }
            Op::BroadcastTime(a) => {
                let &[b, l, c] = node.value.shape() else { unreachable!() };
                acc(*a, &mut |g| {
                    for bi in 0..b {
                        for t in 0..l {
                            for ci in 0..c {
                                g[bi * c + ci] += gout[(bi * l + t) * c + ci];
                            }
                        }
                    }
                });
            }
            Op::SliceLast { input, start } => {
                let c = self.nodes[input.0].value.last_dim();
                let w = node.value.last_dim();
                acc(*input, &mut |g| {
                    for (r, src) in gout.chunks(w).enumerate() {
                        add_into(&mut g[r * c + start..r * c + start + w], src);
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let total = node.value.last_dim();
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.last_dim();
                    acc(*p, &mut |g| {
                        for (r, dst) in g.chunks_mut(w).enumerate() {
                            add_into(dst, &gout[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::CropTime { input, start } => {
                let &[b, l, c] = self.nodes[input.0].value.shape() else { unreachable!() };
                let len = node.value.shape()[1];
                acc(*input, &mut |g| {
                    for bi in 0..b {
                        add_into(
                            &mut g[(bi * l + start) * c..(bi * l + start + len) * c],
                            &gout[bi * len * c..(bi + 1) * len * c],
                        );
                    }
                });
            }
            Op::Upsample { input, factor } => {
                let c = node.value.last_dim();
                acc(*input, &mut |g| {
                    for (r, dst) in g.chunks_mut(c).enumerate() {
                        for f in 0..*factor {
                            let src = &gout[(r * factor + f) * c..(r * factor + f + 1) * c];
                            add_into(dst, src);
                        }
                    }
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let &[b, l, cin] = self.nodes[input.0].value.shape() else { unreachable!() };
                let w = &self.nodes[weight.0].value;
                let (kc, cout) = (w.shape()[0], w.shape()[1]);
                let lo = geom.out_len;
                acc(*weight, &mut |g| gemm(kc, b * lo, cout, cols, true, gout, false, g, true));
                if let Some(bv) = bias {
                    acc(*bv, &mut |g| {
                        for row in gout.chunks(cout) {
                            add_into(g, row);
                        }
                    });
                }
                let mut dcols = vec![0.0; b * lo * kc];
                gemm(b * lo, cout, kc, gout, false, w.data(), true, &mut dcols, false);
                acc(*input, &mut |g| {
                    for bi in 0..b {
                        for o in 0..lo {
                            let src = &dcols[(bi * lo + o) * kc..(bi * lo + o + 1) * kc];
                            for tap in 0..geom.kernel {
                                let p = (o * geom.stride + tap * geom.dilation) as isize - geom.pad_left as isize;
                                if p >= 0 && (p as usize) < l {
                                    let p = p as usize;
                                    add_into(
                                        &mut g[(bi * l + p) * cin..(bi * l + p + 1) * cin],
                                        &src[tap * cin..(tap + 1) * cin],
                                    );
                                }
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { input, xhat, rstd } => {
                let c = node.value.last_dim();
                acc(*input, &mut |g| {
                    for (r, ((gr, dy), xh)) in g
                        .chunks_mut(c)
                        .zip(gout.chunks(c))
                        .zip(xhat.chunks(c))
                        .enumerate()
                    {
                        let mdy = dy.iter().sum::<f64>() / c as f64;
                        let mdyx = dy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for i in 0..c {
                            gr[i] += rstd[r] * (dy[i] - mdy - xh[i] * mdyx);
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let &[b, l, d] = node.value.shape() else { unreachable!() };
                let dh = d / heads;
                let scale = 1.0 / math::sqrt(dh as f64);
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut dq = vec![0.0; b * l * d];
                let mut dk = vec![0.0; b * l * d];
                let mut dv = vec![0.0; b * l * d];
                let mut dp = vec![0.0; l];
                for bi in 0..b {
                    for h in 0..*heads {
                        let off = h * dh;
                        let p = &probs[(bi * heads + h) * l * l..(bi * heads + h + 1) * l * l];
                        for i in 0..l {
                            let go = &gout[(bi * l + i) * d + off..(bi * l + i) * d + off + dh];
                            let prow = &p[i * l..(i + 1) * l];
                            let mut dot = 0.0;
                            for j in 0..l {
                                let vj = (bi * l + j) * d + off;
                                dp[j] = go.iter().zip(&vd[vj..vj + dh]).map(|(x, y)| x * y).sum();
                                dot += dp[j] * prow[j];
                                for (x, y) in dv[vj..vj + dh].iter_mut().zip(go) {
                                    *x += prow[j] * y;
                                }
                            }
                            let qi = (bi * l + i) * d + off;
                            for j in 0..l {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = (bi * l + j) * d + off;
                                for c in 0..dh {
                                    dq[qi + c] += ds * kd[kj + c];
                                    dk[kj + c] += ds * qd[qi + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, &mut |g| add_into(g, &dq));
                acc(*k, &mut |g| add_into(g, &dk));
                acc(*v, &mut |g| add_into(g, &dv));
            }
            Op::SmoothL1 {
                pred,
                target,
                threshold,
            } => {
                let (vp, vt) = (val(*pred), val(*target));
                let n = vp.len() as f64;
                let dl: Vec<f64> = vp
                    .iter()
                    .zip(vt)
                    .map(|(p, t)| {
                        let d = p - t;
                        let s = if d.abs() < *threshold { d / threshold } else { d.signum() };
                        s * gout[0] / n
                    })
                    .collect();
                acc(*pred, &mut |g| add_into(g, &dl));
                acc(*target, &mut |g| g.iter_mut().zip(&dl).for_each(|(x, y)| *x -= y));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.nodes[logits.0].value.last_dim();
                let s = gout[0] / labels.len() as f64;
                acc(*logits, &mut |g| {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let t = if j == y { 1.0 } else { 0.0 };
                            g[r * c + j] += s * (probs[r * c + j] - t);
                        }
                    }
                });
            }
            Op::GatherRows { table, indices } => {
                let d = node.value.last_dim();
                acc(*table, &mut |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut g[i * d..(i + 1) * d], &gout[r * d..(r + 1) * d]);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// A differentiable scalar function of one tensor, used by finite-difference checks.
pub type ScalarFn<'a> = Box<dyn Fn(&mut Graph, Var) -> Result<Var> + 'a>;

/// Largest relative error between the tape gradient of `f` at `x` and a central
/// finite difference with step `h`. Relative error is measured against
/// `max(|numeric|, |analytic|, floor)`.
pub fn gradient_check(f: &ScalarFn<'_>, x: &Tensor, h: f64, floor: f64) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv)?;
    let analytic = g.grad_wrt(y, &[xv])?.remove(0);
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let y = f(&mut g, v)?;
        Ok(g.value(y).item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let denom = numeric.abs().max(a.abs()).max(floor);
        worst = worst.max((numeric - a).abs() / denom);
    }
    Ok(worst)
}
