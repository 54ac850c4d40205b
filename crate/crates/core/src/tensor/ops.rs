//! Differentiable operations and their vector-Jacobian products.
//!
//! Every backward rule is written in terms of other recorded operations, so
//! the backward pass can itself be recorded and differentiated.

use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::tape::record;
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    MatMul,
    Transpose,
    Sum,
    Expand,
    BroadcastRows,
    SumRows,
    BroadcastCols,
    SumCols,
    Reshape,
    Relu,
    Exp,
    Powf(f64),
    LogSoftmax,
    Conv2d { stride: usize, pad: usize },
    ConvInputGrad { stride: usize, pad: usize },
    ConvKernelGrad { stride: usize, pad: usize },
    GlobalAvgPool,
    GapBackward,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() == rank {
        Ok(())
    } else {
        Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        })
    }
}

impl Tensor {
    fn zip_with(&self, other: &Tensor, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(mismatch(name, self, other));
        }
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        Ok(record(op, &[self, other], self.shape(), data))
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&a| f(a)).collect();
        record(op, &[self], self.shape(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Sub, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn neg(&self) -> Tensor {
        self.map(Op::Neg, |a| -a)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(Op::Scale(c), |a| a * c)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("same shape")
    }

    pub fn relu(&self) -> Tensor {
        self.map(Op::Relu, |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        self.map(Op::Exp, f64::exp)
    }

    /// Elementwise `x^p`.
    pub fn powf(&self, p: f64) -> Tensor {
        self.map(Op::Powf(p), |a| a.powf(p))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        record(Op::Sum, &[self], &[], vec![s])
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        if self.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "expand",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let target = Tensor::zeros(shape)?;
        Ok(record(Op::Expand, &[self], shape, vec![self.data()[0]; target.numel()]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(record(Op::Reshape, &[self], shape, self.to_vec()))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        expect_rank("matmul", self, 2)?;
        expect_rank("matmul", other, 2)?;
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(mismatch("matmul", self, other));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, &mut out, false);
        Ok(record(Op::MatMul, &[self, other], &[m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        expect_rank("transpose", self, 2)?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(record(Op::Transpose, &[self], &[n, m], out))
    }

    /// `[n] -> [rows, n]`, repeating the vector on every row.
    pub fn broadcast_rows(&self, rows: usize) -> Result<Tensor> {
        expect_rank("broadcast_rows", self, 1)?;
        let mut out = Vec::with_capacity(rows * self.numel());
        for _ in 0..rows {
            out.extend_from_slice(self.data());
        }
        Ok(record(Op::BroadcastRows, &[self], &[rows, self.numel()], out))
    }

    /// `[m, n] -> [n]`, summing over rows.
    pub fn sum_rows(&self) -> Result<Tensor> {
        expect_rank("sum_rows", self, 2)?;
        let n = self.shape()[1];
        let mut out = vec![0.0; n];
        for row in self.data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(record(Op::SumRows, &[self], &[n], out))
    }

    /// `[m] -> [m, cols]`, repeating each entry along its row.
    pub fn broadcast_cols(&self, cols: usize) -> Result<Tensor> {
        expect_rank("broadcast_cols", self, 1)?;
        let mut out = Vec::with_capacity(cols * self.numel());
        for &v in self.data() {
            out.extend(std::iter::repeat_n(v, cols));
        }
        Ok(record(Op::BroadcastCols, &[self], &[self.numel(), cols], out))
    }

    /// `[m, n] -> [m]`, summing each row.
    pub fn sum_cols(&self) -> Result<Tensor> {
        expect_rank("sum_cols", self, 2)?;
        let n = self.shape()[1];
        let out = self.data().chunks(n).map(|r| r.iter().sum()).collect();
        Ok(record(Op::SumCols, &[self], &[self.shape()[0]], out))
    }

    /// Row-wise log-softmax of a `[batch, classes]` tensor, computed with
    /// the max-shifted log-sum-exp.
    pub fn log_softmax(&self) -> Result<Tensor> {
        expect_rank("log_softmax", self, 2)?;
        let n = self.shape()[1];
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        Ok(record(Op::LogSoftmax, &[self], self.shape(), out))
    }

    pub fn softmax(&self) -> Result<Tensor> {
        Ok(self.log_softmax()?.exp())
    }

    /// Add a per-column bias `[n]` to every row of `[m, n]`.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        expect_rank("add_row_bias", self, 2)?;
        self.add(&bias.broadcast_rows(self.shape()[0])?)
    }

    /// Cross-correlation of `[C_in, H, W]` or `[N, C_in, H, W]` input with
    /// `[C_out, C_in, kh, kw]` kernels.
    pub fn conv2d(&self, kernels: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        if self.rank() == 3 {
            let s = self.shape();
            let batched = self.reshape(&[1, s[0], s[1], s[2]])?;
            let y = batched.conv2d(kernels, stride, pad)?;
            let ys = y.shape().to_vec();
            return y.reshape(&ys[1..]);
        }
        let geom = conv_geom(self.shape(), kernels.shape(), stride, pad)?;
        let (n, c_out) = (self.shape()[0], kernels.shape()[0]);
        let mut out = vec![0.0; n * c_out * geom.out_len()];
        conv_forward(self.data(), kernels.data(), &geom, n, c_out, &mut out);
        Ok(record(
            Op::Conv2d { stride, pad },
            &[self, kernels],
            &[n, c_out, geom.out_h, geom.out_w],
            out,
        ))
    }

    /// Gradient of a convolution with respect to its input, given the
    /// output gradient `self` of shape `[N, C_out, oh, ow]`.
    fn conv2d_input_grad(&self, kernels: &Tensor, in_hw: (usize, usize), stride: usize, pad: usize) -> Result<Tensor> {
        let ks = kernels.shape();
        let n = self.shape()[0];
        let in_shape = [n, ks[1], in_hw.0, in_hw.1];
        let geom = conv_geom(&in_shape, ks, stride, pad)?;
        let mut out = vec![0.0; n * geom.in_len()];
        let mut cols = vec![0.0; geom.patch_len() * geom.out_len()];
        let c_out = ks[0];
        for b in 0..n {
            let gb = &self.data()[b * c_out * geom.out_len()..(b + 1) * c_out * geom.out_len()];
            gemm(
                geom.patch_len(),
                c_out,
                geom.out_len(),
                kernels.data(),
                true,
                gb,
                false,
                &mut cols,
                false,
            );
            col2im(&cols, &geom, &mut out[b * geom.in_len()..(b + 1) * geom.in_len()]);
        }
        Ok(record(
            Op::ConvInputGrad { stride, pad },
            &[self, kernels],
            &in_shape,
            out,
        ))
    }

    /// Gradient of a convolution with respect to its kernels; `self` is the
    /// convolution input and `out_grad` the output gradient.
    fn conv2d_kernel_grad(&self, out_grad: &Tensor, khw: (usize, usize), stride: usize, pad: usize) -> Result<Tensor> {
        let (n, c_in) = (self.shape()[0], self.shape()[1]);
        let c_out = out_grad.shape()[1];
        let k_shape = [c_out, c_in, khw.0, khw.1];
        let geom = conv_geom(self.shape(), &k_shape, stride, pad)?;
        let mut out = vec![0.0; c_out * geom.patch_len()];
        let mut cols = vec![0.0; geom.patch_len() * geom.out_len()];
        for b in 0..n {
            im2col(
                &self.data()[b * geom.in_len()..(b + 1) * geom.in_len()],
                &geom,
                &mut cols,
            );
            let gb = &out_grad.data()[b * c_out * geom.out_len()..(b + 1) * c_out * geom.out_len()];
            gemm(
                c_out,
                geom.out_len(),
                geom.patch_len(),
                gb,
                false,
                &cols,
                true,
                &mut out,
                true,
            );
        }
        Ok(record(
            Op::ConvKernelGrad { stride, pad },
            &[self, out_grad],
            &k_shape,
            out,
        ))
    }

    /// Mean over each `H x W` plane: `[N, C, H, W] -> [N, C]` or
    /// `[C, H, W] -> [C]`.
    pub fn global_avg_pool2d(&self) -> Result<Tensor> {
        if self.rank() == 3 {
            let s = self.shape();
            let y = self.reshape(&[1, s[0], s[1], s[2]])?.global_avg_pool2d()?;
            return y.reshape(&[s[0]]);
        }
        expect_rank("global_avg_pool2d", self, 4)?;
        let s = self.shape();
        let plane = s[2] * s[3];
        let out = self
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(record(Op::GlobalAvgPool, &[self], &[s[0], s[1]], out))
    }

    fn gap_backward(&self, hw: (usize, usize)) -> Result<Tensor> {
        expect_rank("gap_backward", self, 2)?;
        let plane = hw.0 * hw.1;
        let mut out = Vec::with_capacity(self.numel() * plane);
        for &v in self.data() {
            out.extend(std::iter::repeat_n(v / plane as f64, plane));
        }
        let s = self.shape();
        Ok(record(Op::GapBackward, &[self], &[s[0], s[1], hw.0, hw.1], out))
    }
}

fn conv_geom(input: &[usize], kernels: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if input.len() != 4 || kernels.len() != 4 {
        return Err(TensorError::Conv(format!(
            "expected [N, C, H, W] input and [C_out, C_in, kh, kw] kernels, got {input:?} and {kernels:?}"
        )));
    }
    if stride == 0 {
        return Err(TensorError::Conv("stride must be positive".into()));
    }
    if input[1] != kernels[1] {
        return Err(TensorError::Conv(format!(
            "input has {} channels but kernels expect {}",
            input[1], kernels[1]
        )));
    }
    let (h, w, kh, kw) = (input[2], input[3], kernels[2], kernels[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(TensorError::Conv(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    Ok(ConvGeom {
        channels: input[1],
        height: h,
        width: w,
        kh,
        kw,
        stride,
        pad,
        out_h: (h + 2 * pad - kh) / stride + 1,
        out_w: (w + 2 * pad - kw) / stride + 1,
    })
}

fn conv_forward(x: &[f64], k: &[f64], geom: &ConvGeom, n: usize, c_out: usize, out: &mut [f64]) {
    let mut cols = vec![0.0; geom.patch_len() * geom.out_len()];
    let ol = c_out * geom.out_len();
    for b in 0..n {
        im2col(&x[b * geom.in_len()..(b + 1) * geom.in_len()], geom, &mut cols);
        gemm(
            c_out,
            geom.patch_len(),
            geom.out_len(),
            k,
            false,
            &cols,
            false,
            &mut out[b * ol..(b + 1) * ol],
            false,
        );
    }
}

/// Vector-Jacobian product of `op` for upstream gradient `g`. Entries of the
/// result line up with `inputs`; `None` where `need` is false.
pub(crate) fn vjp(
    op: &Op,
    inputs: &[Tensor],
    output: &Tensor,
    g: &Tensor,
    need: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
    let want = |i: usize| need.get(i).copied().unwrap_or(false);
    match op {
        Op::Leaf => {}
        Op::Add => {
            if want(0) {
                out[0] = Some(g.clone());
            }
            if want(1) {
                out[1] = Some(g.clone());
            }
        }
        Op::Sub => {
            if want(0) {
                out[0] = Some(g.clone());
            }
            if want(1) {
                out[1] = Some(g.neg());
            }
        }
        Op::Mul => {
            if want(0) {
                out[0] = Some(g.mul(&inputs[1])?);
            }
            if want(1) {
                out[1] = Some(g.mul(&inputs[0])?);
            }
        }
        Op::Neg => out[0] = Some(g.neg()),
        Op::Scale(c) => out[0] = Some(g.scale(*c)),
        Op::MatMul => {
            if want(0) {
                out[0] = Some(g.matmul(&inputs[1].transpose()?)?);
            }
            if want(1) {
                out[1] = Some(inputs[0].transpose()?.matmul(g)?);
            }
        }
        Op::Transpose => out[0] = Some(g.transpose()?),
        Op::Sum => out[0] = Some(g.expand(inputs[0].shape())?),
        Op::Expand => out[0] = Some(g.sum().reshape(inputs[0].shape())?),
        Op::BroadcastRows => out[0] = Some(g.sum_rows()?),
        Op::SumRows => out[0] = Some(g.broadcast_rows(inputs[0].shape()[0])?),
        Op::BroadcastCols => out[0] = Some(g.sum_cols()?),
        Op::SumCols => out[0] = Some(g.broadcast_cols(inputs[0].shape()[1])?),
        Op::Reshape => out[0] = Some(g.reshape(inputs[0].shape())?),
        Op::Relu => {
            let mask = Tensor::raw(
                inputs[0].shape(),
                inputs[0]
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                    .collect(),
            );
            out[0] = Some(g.mul(&mask)?);
        }
        Op::Exp => out[0] = Some(g.mul(output)?),
        Op::Powf(p) => out[0] = Some(g.mul(&inputs[0].powf(p - 1.0).scale(*p))?),
        Op::LogSoftmax => {
            let cols = inputs[0].shape()[1];
            let spread = output.exp().mul(&g.sum_cols()?.broadcast_cols(cols)?)?;
            out[0] = Some(g.sub(&spread)?);
        }
        Op::Conv2d { stride, pad } => {
            let (x, k) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(g.conv2d_input_grad(k, (x.shape()[2], x.shape()[3]), *stride, *pad)?);
            }
            if want(1) {
                out[1] = Some(x.conv2d_kernel_grad(g, (k.shape()[2], k.shape()[3]), *stride, *pad)?);
            }
        }
        Op::ConvInputGrad { stride, pad } => {
            // output = K^T applied to inputs[0]; g has the conv-input shape.
            let (og, k) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(g.conv2d(k, *stride, *pad)?);
            }
            if want(1) {
                out[1] = Some(g.conv2d_kernel_grad(og, (k.shape()[2], k.shape()[3]), *stride, *pad)?);
            }
        }
        Op::ConvKernelGrad { stride, pad } => {
            // output = dK(x, og); g has the kernel shape.
            let (x, og) = (&inputs[0], &inputs[1]);
            if want(0) {
                out[0] = Some(og.conv2d_input_grad(g, (x.shape()[2], x.shape()[3]), *stride, *pad)?);
            }
            if want(1) {
                out[1] = Some(x.conv2d(g, *stride, *pad)?);
            }
        }
        Op::GlobalAvgPool => {
            let s = inputs[0].shape();
            out[0] = Some(g.gap_backward((s[2], s[3]))?);
        }
        Op::GapBackward => out[0] = Some(g.global_avg_pool2d()?),
    }
    Ok(out)
}
