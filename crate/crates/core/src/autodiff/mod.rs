//! Minimal reverse-mode differentiation over dense `f32` tensors.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value,
//! and [`Graph::backward`] walks the tape in reverse creation order. Gradients
//! of leaves created with `requires_grad` accumulate across backward calls
//! until [`Graph::zero_grad`].

mod adam;
pub mod gradcheck;
pub(crate) mod conv;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tensor::Tensor;

use conv::{Geometry, Mat};

use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-axis strided selection: indices `start, start + step, ...` below `stop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisSlice {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
}

impl AxisSlice {
    pub fn full(len: usize) -> Self {
        Self {
            start: 0,
            stop: len,
            step: 1,
        }
    }

    pub fn strided(len: usize, step: usize) -> Self {
        Self {
            start: 0,
            stop: len,
            step,
        }
    }

    fn len(&self) -> usize {
        if self.stop <= self.start {
            0
        } else {
            (self.stop - self.start).div_ceil(self.step)
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice(Var, Vec<AxisSlice>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geometry,
        out_c: usize,
    },
    ConvTransposed {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geometry,
        in_c: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Adds a leaf tensor; gradients are collected for it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, Op::Scale(a, s), |v| v * s)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f32::abs)
    }

    /// Sum of all entries, accumulated in `f64`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s as f32), rg, Op::Sum(a))
    }

    /// Mean of all entries, accumulated in `f64`.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: f64 = x.data().iter().map(|&v| v as f64).sum();
        let m = s / x.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m as f32), rg, Op::Mean(a))
    }

    /// Concatenation of 4-D tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = self.value(first).dims4("concat")?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &p in parts {
                let x = self.value(p);
                let c = x.shape()[1];
                data.extend_from_slice(&x.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![n, total_c, h, w], data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, rg, Op::Concat(parts.to_vec())))
    }

    /// Strided selection, one [`AxisSlice`] per axis.
    pub fn slice(&mut self, a: Var, axes: &[AxisSlice]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bad = || Error::ShapeMismatch {
            op: "slice",
            lhs: shape.clone(),
            rhs: axes.iter().map(|s| s.len()).collect(),
        };
        if axes.len() != shape.len() {
            return Err(bad());
        }
        for (s, &d) in axes.iter().zip(&shape) {
            if s.step == 0 || s.stop > d || s.len() == 0 {
                return Err(bad());
            }
        }
        let out_shape: Vec<usize> = axes.iter().map(AxisSlice::len).collect();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for_each_sliced_index(&shape, axes, |k| data.push(src[k]));
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Slice(a, axes.to_vec())))
    }

    /// 2-D cross-correlation. `x`: `[n, cin, h, w]`, `w`: `[cout, cin, kh, kw]`,
    /// optional bias `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).dims4("conv2d")?;
        let [cout, wcin, kh, kw] = self.value(w).dims4("conv2d")?;
        let mismatch = |g: &Self| Error::ShapeMismatch {
            op: "conv2d",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(w).to_vec(),
        };
        if wcin != cin || stride == 0 {
            return Err(mismatch(self));
        }
        let out_h = conv::conv_out_size(h, kh, stride, pad).ok_or_else(|| mismatch(self))?;
        let out_w = conv::conv_out_size(wd, kw, stride, pad).ok_or_else(|| mismatch(self))?;
        self.check_bias("conv2d", b, cout)?;
        let geom = Geometry {
            batch: n,
            channels: cin,
            in_h: h,
            in_w: wd,
            out_h,
            out_w,
            kh,
            kw,
            stride,
            pad,
        };
        let col = conv::im2col(self.value(x).data(), &geom);
        let ncols = geom.col_cols();
        let mut out_cm = vec![0.0f32; cout * ncols];
        conv::gemm(
            Mat::new(self.value(w).data(), cout, geom.col_rows()),
            Mat::new(&col, geom.col_rows(), ncols),
            0.0,
            &mut out_cm,
        );
        let mut out = conv::cm_to_nchw(&out_cm, n, cout, out_h * out_w);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), out_h * out_w);
        }
        let value = Tensor::new(vec![n, cout, out_h, out_w], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_c: cout,
            },
        ))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] in `x`).
    /// `x`: `[n, cin, h, w]`, `w`: `[cin, cout, kh, kw]`, optional bias `[cout]`.
    pub fn conv2d_transposed(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).dims4("conv2d_transposed")?;
        let [wcin, cout, kh, kw] = self.value(w).dims4("conv2d_transposed")?;
        let mismatch = |g: &Self| Error::ShapeMismatch {
            op: "conv2d_transposed",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(w).to_vec(),
        };
        if wcin != cin || stride == 0 {
            return Err(mismatch(self));
        }
        let out_h = conv::conv_transposed_out_size(h, kh, stride, pad).ok_or_else(|| mismatch(self))?;
        let out_w = conv::conv_transposed_out_size(wd, kw, stride, pad).ok_or_else(|| mismatch(self))?;
        self.check_bias("conv2d_transposed", b, cout)?;
        // conv geometry mapping the (larger) output back onto the input grid
        let geom = Geometry {
            batch: n,
            channels: cout,
            in_h: out_h,
            in_w: out_w,
            out_h: h,
            out_w: wd,
            kh,
            kw,
            stride,
            pad,
        };
        if conv::conv_out_size(out_h, kh, stride, pad) != Some(h)
            || conv::conv_out_size(out_w, kw, stride, pad) != Some(wd)
        {
            return Err(mismatch(self));
        }
        let x_cm = conv::nchw_to_cm(self.value(x).data(), n, cin, h * wd);
        let mut col = vec![0.0f32; geom.col_rows() * geom.col_cols()];
        conv::gemm(
            Mat::new(self.value(w).data(), cin, geom.col_rows()).t(),
            Mat::new(&x_cm, cin, geom.col_cols()),
            0.0,
            &mut col,
        );
        let mut out = vec![0.0f32; n * cout * out_h * out_w];
        conv::col2im(&col, &geom, &mut out);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), out_h * out_w);
        }
        let value = Tensor::new(vec![n, cout, out_h, out_w], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            value,
            rg,
            Op::ConvTransposed {
                x,
                w,
                b,
                geom,
                in_c: cin,
            },
        ))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![channels],
                });
            }
        }
        Ok(())
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                        None => node.grad = Some(g),
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, || g.clone());
                    self.accumulate(&mut grads, b, || g.clone());
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(a).data(), self.value(b).data());
                    let ga: Vec<f32> = g.iter().zip(y).map(|(d, v)| d * v).collect();
                    let gb: Vec<f32> = g.iter().zip(x).map(|(d, v)| d * v).collect();
                    self.accumulate(&mut grads, a, || ga);
                    self.accumulate(&mut grads, b, || gb);
                }
                Op::Scale(a, s) => {
                    self.accumulate(&mut grads, a, || g.iter().map(|d| d * s).collect());
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(d, &v)| if v > 0.0 { *d } else { slope * d })
                        .collect();
                    self.accumulate(&mut grads, a, || ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.data();
                    let ga = g.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                    self.accumulate(&mut grads, a, || ga);
                }
                Op::Square(a) => {
                    let x = self.value(a).data();
                    let ga = g.iter().zip(x).map(|(d, v)| 2.0 * d * v).collect();
                    self.accumulate(&mut grads, a, || ga);
                }
                Op::Abs(a) => {
                    let x = self.value(a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(d, &v)| if v > 0.0 { *d } else if v < 0.0 { -d } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, a, || ga);
                }
                Op::Sum(a) => {
                    let n = self.value(a).numel();
                    self.accumulate(&mut grads, a, || vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(a).numel();
                    let d = (g[0] as f64 / n as f64) as f32;
                    self.accumulate(&mut grads, a, || vec![d; n]);
                }
                Op::Concat(parts) => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    let (n, total_c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let mut offset = 0;
                    for p in parts {
                        let c = self.shape(p)[1];
                        let gp = || {
                            let mut out = Vec::with_capacity(n * c * hw);
                            for b in 0..n {
                                let base = (b * total_c + offset) * hw;
                                out.extend_from_slice(&g[base..base + c * hw]);
                            }
                            out
                        };
                        self.accumulate(&mut grads, p, gp);
                        offset += c;
                    }
                }
                Op::Slice(a, axes) => {
                    let shape = self.shape(a).to_vec();
                    let gp = || {
                        let mut out = vec![0.0f32; shape.iter().product()];
                        let mut it = g.iter();
                        for_each_sliced_index(&shape, &axes, |k| out[k] += *it.next().unwrap());
                        out
                    };
                    self.accumulate(&mut grads, a, gp);
                }
                Op::Conv2d { x, w, b, geom, out_c } => {
                    let hw = geom.out_h * geom.out_w;
                    let g_cm = conv::nchw_to_cm(&g, geom.batch, out_c, hw);
                    let ncols = geom.col_cols();
                    if self.requires_grad(w) {
                        let col = conv::im2col(self.value(x).data(), &geom);
                        let mut gw = vec![0.0f32; out_c * geom.col_rows()];
                        conv::gemm(
                            Mat::new(&g_cm, out_c, ncols),
                            Mat::new(&col, geom.col_rows(), ncols).t(),
                            0.0,
                            &mut gw,
                        );
                        self.accumulate(&mut grads, w, || gw);
                    }
                    if self.requires_grad(x) {
                        let mut dcol = vec![0.0f32; geom.col_rows() * ncols];
                        conv::gemm(
                            Mat::new(self.value(w).data(), out_c, geom.col_rows()).t(),
                            Mat::new(&g_cm, out_c, ncols),
                            0.0,
                            &mut dcol,
                        );
                        let mut gx = vec![0.0f32; self.value(x).numel()];
                        conv::col2im(&dcol, &geom, &mut gx);
                        self.accumulate(&mut grads, x, || gx);
                    }
                    if let Some(b) = b {
                        self.accumulate(&mut grads, b, || channel_sums(&g_cm, out_c));
                    }
                }
                Op::ConvTransposed { x, w, b, geom, in_c } => {
                    // geom maps the output grid (channels = cout) onto the input grid
                    let ncols = geom.col_cols();
                    let dcol = conv::im2col(&g, &geom);
                    if self.requires_grad(w) {
                        let x_cm = conv::nchw_to_cm(self.value(x).data(), geom.batch, in_c, geom.out_h * geom.out_w);
                        let mut gw = vec![0.0f32; in_c * geom.col_rows()];
                        conv::gemm(
                            Mat::new(&x_cm, in_c, ncols),
                            Mat::new(&dcol, geom.col_rows(), ncols).t(),
                            0.0,
                            &mut gw,
                        );
                        self.accumulate(&mut grads, w, || gw);
                    }
                    if self.requires_grad(x) {
                        let mut gx_cm = vec![0.0f32; in_c * ncols];
                        conv::gemm(
                            Mat::new(self.value(w).data(), in_c, geom.col_rows()),
                            Mat::new(&dcol, geom.col_rows(), ncols),
                            0.0,
                            &mut gx_cm,
                        );
                        let gx = conv::cm_to_nchw(&gx_cm, geom.batch, in_c, geom.out_h * geom.out_w);
                        self.accumulate(&mut grads, x, || gx);
                    }
                    if let Some(b) = b {
                        let cout = geom.channels;
                        let g_cm = conv::nchw_to_cm(&g, geom.batch, cout, geom.in_h * geom.in_w);
                        self.accumulate(&mut grads, b, || channel_sums(&g_cm, cout));
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, make: impl FnOnce() -> Vec<f32>) {
        if !self.requires_grad(v) {
            return;
        }
        let g = make();
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(g),
        }
    }
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], hw: usize) {
    for (k, plane) in out.chunks_mut(hw).enumerate() {
        let b = bias[k % bias.len()];
        plane.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(g_cm: &[f32], channels: usize) -> Vec<f32> {
    let per = g_cm.len() / channels;
    g_cm.chunks(per)
        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect()
}

/// Calls `f` with the flat source index of every selected element, in
/// row-major order of the output.
fn for_each_sliced_index(shape: &[usize], axes: &[AxisSlice], mut f: impl FnMut(usize)) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let lens: Vec<usize> = axes.iter().map(AxisSlice::len).collect();
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let inner = axes[last];
    loop {
        let base: usize = (0..last)
            .map(|d| (axes[d].start + idx[d] * axes[d].step) * strides[d])
            .sum();
        for j in 0..lens[last] {
            f(base + inner.start + j * inner.step);
        }
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < lens[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests;
