//! Differentiable tensor operations.
//!
//! Each op validates shapes, computes its output eagerly through the kernels
//! in [`super::kernels`], and records a backward closure on the [`Tape`].
//! Backward closures read the output gradient, compute contributions for
//! every input that needs one, and accumulate them additively.

use super::kernels::{self, AxisLayout, ConvDims, LinearDims, MatmulDims, ScanDims, ScanGrads};
use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::util::canonical_sum;

fn require_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let out = Tensor::op_output(data, a.shape(), &[a, b]);
    let (a_, b_, o_) = (a.clone(), b.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            a_.add_to_grad(&g);
        }
        if b_.needs_grad() {
            b_.add_to_grad(&g);
        }
    });
    Ok(out)
}

/// Elementwise product of two same-shape tensors.
pub fn mul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let out = Tensor::op_output(data, a.shape(), &[a, b]);
    let (a_, b_, o_) = (a.clone(), b.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            let contrib: Vec<f64> = g.iter().zip(b_.data().iter()).map(|(gv, bv)| gv * bv).collect();
            a_.add_to_grad(&contrib);
        }
        if b_.needs_grad() {
            let contrib: Vec<f64> = g.iter().zip(a_.data().iter()).map(|(gv, av)| gv * av).collect();
            b_.add_to_grad(&contrib);
        }
    });
    Ok(out)
}

/// Multiplication by a compile-time constant.
pub fn scale(tape: &mut Tape, a: &Tensor, c: f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * c).collect();
    let out = Tensor::op_output(data, a.shape(), &[a]);
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            let contrib: Vec<f64> = g.iter().map(|gv| gv * c).collect();
            a_.add_to_grad(&contrib);
        }
    });
    Ok(out)
}

fn unary_op(
    tape: &mut Tape,
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64 + 'static,
) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    let out = Tensor::op_output(data, a.shape(), &[a]);
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            let contrib: Vec<f64> = g.iter().zip(a_.data().iter()).map(|(gv, &x)| gv * df(x)).collect();
            a_.add_to_grad(&contrib);
        }
    });
    out
}

/// Elementwise natural exponential.
pub fn exp(tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
    Ok(unary_op(tape, a, f64::exp, f64::exp))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    // Exact form: x * Phi(x) with the Gaussian CDF, no tanh approximation.
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
fn gelu_derivative(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

/// Gaussian error linear unit, `x * Phi(x)` (exact CDF form).
pub fn gelu(tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
    Ok(unary_op(tape, a, gelu_scalar, gelu_derivative))
}

#[inline]
pub(crate) fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Sigmoid-weighted linear unit, `x * sigmoid(x)`.
pub fn silu(tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
    Ok(unary_op(tape, a, silu_scalar, |x| {
        let s = sigmoid(x);
        s * (1.0 + x * (1.0 - s))
    }))
}

#[inline]
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    // max(x, 0) + ln(1 + exp(-|x|)) avoids overflow on both tails.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Softplus, `ln(1 + exp(x))`, computed overflow-free.
pub fn softplus(tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
    Ok(unary_op(tape, a, softplus_scalar, sigmoid))
}

/// Sum of all elements, returned as a one-element tensor.
pub fn sum_all(tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
    let total = a.data().iter().sum();
    let out = Tensor::op_output(vec![total], &[1], &[a]);
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            a_.add_to_grad(&vec![g[0]; a_.numel()]);
        }
    });
    Ok(out)
}

/// Mean along one axis; the axis is removed from the shape. Addends are
/// summed in canonical order, so permuting values along the reduced axis
/// cannot change the result.
pub fn mean_axis(tape: &mut Tape, a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.rank() {
        return Err(Error::config(format!(
            "mean_axis: axis {axis} out of range for rank {}",
            a.rank()
        )));
    }
    let shape = a.shape().to_vec();
    let l = kernels::axis_layout(&shape, axis);
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    let mut data = vec![0.0; l.outer * l.inner];
    {
        let x = a.data();
        let mut scratch = vec![0.0; l.len];
        for o in 0..l.outer {
            for i in 0..l.inner {
                let base = o * l.len * l.inner + i;
                for (j, s) in scratch.iter_mut().enumerate() {
                    *s = x[base + j * l.inner];
                }
                data[o * l.inner + i] = canonical_sum(&mut scratch) / l.len as f64;
            }
        }
    }
    let out = Tensor::op_output(data, &out_shape, &[a]);
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if !a_.needs_grad() {
            return;
        }
        let AxisLayout { outer, len, inner } = kernels::axis_layout(&shape, axis);
        let mut contrib = vec![0.0; a_.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let gv = g[o * inner + i] / len as f64;
                let base = o * len * inner + i;
                for j in 0..len {
                    contrib[base + j * inner] = gv;
                }
            }
        }
        a_.add_to_grad(&contrib);
    });
    Ok(out)
}

/// Metadata-only reshape; the new shape must preserve the element count.
pub fn reshape(tape: &mut Tape, a: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    let numel: usize = new_shape.iter().product();
    if numel != a.numel() {
        return Err(Error::config(format!(
            "reshape: {:?} ({} elements) cannot view as {:?} ({} elements)",
            a.shape(),
            a.numel(),
            new_shape,
            numel
        )));
    }
    let out = a.view_with_shape(new_shape.to_vec());
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            a_.add_to_grad(&g);
        }
    });
    Ok(out)
}

fn permute_copy(x: &[f64], shape: &[usize], perm: &[usize], out: &mut [f64]) {
    let rank = shape.len();
    let new_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let new_strides = strides(&new_shape);
    // stride of old axis `p` in the output layout
    let mut out_stride_of_old = vec![0usize; rank];
    for (i, &p) in perm.iter().enumerate() {
        out_stride_of_old[p] = new_strides[i];
    }
    let mut idx = vec![0usize; rank];
    let mut lin_new = 0usize;
    for &v in x {
        out[lin_new] = v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            lin_new += out_stride_of_old[d];
            if idx[d] < shape[d] {
                break;
            }
            lin_new -= shape[d] * out_stride_of_old[d];
            idx[d] = 0;
        }
    }
}

/// Axis permutation (copying). `perm[i]` names the input axis that becomes
/// output axis `i`.
pub fn permute(tape: &mut Tape, a: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::config(format!(
            "permute: {perm:?} is not a permutation of 0..{rank}"
        )));
    }
    let in_shape = a.shape().to_vec();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut data = vec![0.0; a.numel()];
    permute_copy(&a.data(), &in_shape, perm, &mut data);
    let out = Tensor::op_output(data, &out_shape, &[a]);
    let perm_owned = perm.to_vec();
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if !a_.needs_grad() {
            return;
        }
        // Inverse permutation maps output gradient back to input layout.
        let mut inv = vec![0usize; perm_owned.len()];
        for (i, &p) in perm_owned.iter().enumerate() {
            inv[p] = i;
        }
        let mut contrib = vec![0.0; g.len()];
        permute_copy(&g, &out_shape, &inv, &mut contrib);
        a_.add_to_grad(&contrib);
    });
    Ok(out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis(tape: &mut Tape, a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.rank() {
        return Err(Error::config(format!(
            "softmax_axis: axis {axis} out of range for rank {}",
            a.rank()
        )));
    }
    let shape = a.shape().to_vec();
    let mut data = vec![0.0; a.numel()];
    kernels::softmax_forward(&a.data(), &shape, axis, &mut data);
    let out = Tensor::op_output(data, &shape, &[a]);
    let (a_, o_) = (a.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if !a_.needs_grad() {
            return;
        }
        let mut contrib = vec![0.0; g.len()];
        kernels::softmax_backward(&o_.data(), &g, &shape, axis, &mut contrib);
        a_.add_to_grad(&contrib);
    });
    Ok(out)
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(MatmulDims, Vec<usize>)> {
    if a.rank() < 2 {
        return Err(Error::config(format!(
            "matmul: left operand must have rank >= 2, got {:?}",
            a.shape()
        )));
    }
    let (m, k) = (a.shape()[a.rank() - 2], a.shape()[a.rank() - 1]);
    let batch: usize = a.shape()[..a.rank() - 2].iter().product();
    let (b_batched, bk, n) = if b.rank() == 2 {
        (false, b.shape()[0], b.shape()[1])
    } else if b.rank() == a.rank() && b.shape()[..b.rank() - 2] == a.shape()[..a.rank() - 2] {
        (true, b.shape()[b.rank() - 2], b.shape()[b.rank() - 1])
    } else {
        return Err(Error::config(format!(
            "matmul: right operand {:?} does not broadcast against left {:?} (must be rank-2 or share batch dims)",
            b.shape(),
            a.shape()
        )));
    };
    if bk != k {
        return Err(Error::config(format!(
            "matmul: inner dimensions differ, {k} (left) vs {bk} (right)"
        )));
    }
    let mut out_shape = a.shape()[..a.rank() - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);
    Ok((MatmulDims { batch, m, k, n, b_batched }, out_shape))
}

fn matmul_impl(tape: &mut Tape, a: &Tensor, b: &Tensor, canonical: bool) -> Result<Tensor> {
    let (dims, out_shape) = matmul_dims(a, b)?;
    let mut data = vec![0.0; dims.batch * dims.m * dims.n];
    kernels::matmul_forward(&a.data(), &b.data(), &dims, canonical, &mut data);
    let out = Tensor::op_output(data, &out_shape, &[a, b]);
    let (a_, b_, o_) = (a.clone(), b.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if a_.needs_grad() {
            let mut ga = vec![0.0; a_.numel()];
            kernels::matmul_backward_a(&g, &b_.data(), &dims, &mut ga);
            a_.add_to_grad(&ga);
        }
        if b_.needs_grad() {
            let mut gb = vec![0.0; b_.numel()];
            kernels::matmul_backward_b(&g, &a_.data(), &dims, &mut gb);
            b_.add_to_grad(&gb);
        }
    });
    Ok(out)
}

/// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`. The right
/// operand is either rank-2 (shared across the batch) or carries identical
/// leading batch dimensions.
pub fn matmul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_impl(tape, a, b, false)
}

/// Matmul whose inner reduction sums in canonical order. Used where the
/// contracted axis is covered by an exact permutation invariant (attention
/// weights x values over sensor tokens).
pub(crate) fn matmul_canonical(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_impl(tape, a, b, true)
}

/// Affine map `y = x W^T + bias` applied to the last axis; `w` is
/// `[d_out, d_in]`, input rank >= 2.
pub fn linear(tape: &mut Tape, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() < 2 || w.rank() != 2 {
        return Err(Error::config(format!(
            "linear: need input rank >= 2 and weight rank 2, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let d_in = x.shape()[x.rank() - 1];
    let (d_out, w_in) = (w.shape()[0], w.shape()[1]);
    if w_in != d_in {
        return Err(Error::config(format!(
            "linear: input feature dim {d_in} does not match weight [d_out={d_out}, d_in={w_in}]"
        )));
    }
    if let Some(bv) = bias {
        if bv.shape() != [d_out] {
            return Err(Error::config(format!(
                "linear: bias shape {:?} must be [{d_out}]",
                bv.shape()
            )));
        }
    }
    let rows = x.numel() / d_in;
    let dims = LinearDims { rows, d_in, d_out };
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    let mut data = vec![0.0; rows * d_out];
    {
        let xb = x.data();
        let wb = w.data();
        match bias {
            Some(bv) => kernels::linear_forward(&xb, &wb, Some(&bv.data()), &dims, &mut data),
            None => kernels::linear_forward(&xb, &wb, None, &dims, &mut data),
        }
    }
    let inputs: Vec<&Tensor> = match bias {
        Some(bv) => vec![x, w, bv],
        None => vec![x, w],
    };
    let out = Tensor::op_output(data, &out_shape, &inputs);
    let (x_, w_, o_) = (x.clone(), w.clone(), out.clone());
    let bias_ = bias.cloned();
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if x_.needs_grad() {
            let mut gx = vec![0.0; x_.numel()];
            kernels::linear_backward_input(&g, &w_.data(), &dims, &mut gx);
            x_.add_to_grad(&gx);
        }
        if w_.needs_grad() {
            let mut gw = vec![0.0; w_.numel()];
            kernels::linear_backward_weight(&g, &x_.data(), &dims, &mut gw);
            w_.add_to_grad(&gw);
        }
        if let Some(bv) = &bias_ {
            if bv.needs_grad() {
                let mut gb = vec![0.0; bv.numel()];
                kernels::linear_backward_bias(&g, &dims, &mut gb);
                bv.add_to_grad(&gb);
            }
        }
    });
    Ok(out)
}

/// Grouped 1-D convolution over `[batch, c_in, t_in]` with weight
/// `[c_out, c_in/groups, k]`, optional bias `[c_out]`, and asymmetric zero
/// padding `(pad_l, pad_r)`.
pub fn conv1d_grouped(
    tape: &mut Tape,
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: (usize, usize),
    groups: usize,
) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 3 {
        return Err(Error::config(format!(
            "conv1d_grouped: need input rank 3 and weight rank 3, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (batch, c_in, t_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, w_cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::config(format!(
            "conv1d_grouped: groups={groups} must divide c_in={c_in} and c_out={c_out}"
        )));
    }
    if w_cin != c_in / groups {
        return Err(Error::config(format!(
            "conv1d_grouped: weight expects {w_cin} channels per group but c_in/groups = {}",
            c_in / groups
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv1d_grouped: stride must be >= 1".to_string()));
    }
    if let Some(bv) = bias {
        if bv.shape() != [c_out] {
            return Err(Error::config(format!(
                "conv1d_grouped: bias shape {:?} must be [{c_out}]",
                bv.shape()
            )));
        }
    }
    let t_out = kernels::conv_t_out(t_in, k, stride, pad.0, pad.1).ok_or_else(|| {
        Error::config(format!(
            "conv1d_grouped: kernel {k} exceeds padded input length {} (zero-length output)",
            t_in + pad.0 + pad.1
        ))
    })?;
    let dims = ConvDims {
        batch,
        c_in,
        t_in,
        c_out,
        k,
        stride,
        pad_l: pad.0,
        pad_r: pad.1,
        groups,
        t_out,
    };
    let mut data = vec![0.0; batch * c_out * t_out];
    {
        let xb = x.data();
        let wb = w.data();
        match bias {
            Some(bv) => kernels::conv1d_forward(&xb, &wb, Some(&bv.data()), &dims, &mut data),
            None => kernels::conv1d_forward(&xb, &wb, None, &dims, &mut data),
        }
    }
    let inputs: Vec<&Tensor> = match bias {
        Some(bv) => vec![x, w, bv],
        None => vec![x, w],
    };
    let out = Tensor::op_output(data, &[batch, c_out, t_out], &inputs);
    let (x_, w_, o_) = (x.clone(), w.clone(), out.clone());
    let bias_ = bias.cloned();
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        if x_.needs_grad() {
            let mut gx = vec![0.0; x_.numel()];
            kernels::conv1d_backward_input(&g, &w_.data(), &dims, &mut gx);
            x_.add_to_grad(&gx);
        }
        if w_.needs_grad() {
            let mut gw = vec![0.0; w_.numel()];
            kernels::conv1d_backward_weight(&g, &x_.data(), &dims, &mut gw);
            w_.add_to_grad(&gw);
        }
        if let Some(bv) = &bias_ {
            if bv.needs_grad() {
                let mut gb = vec![0.0; bv.numel()];
                kernels::conv1d_backward_bias(&g, &dims, &mut gb);
                bv.add_to_grad(&gb);
            }
        }
    });
    Ok(out)
}

/// Per-channel normalization of `[batch, channels, t]` over the time axis
/// (zero mean, unit population variance, epsilon-stabilized) with learned
/// per-channel scale and shift.
pub fn time_layer_norm(
    tape: &mut Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::config(format!(
            "time_layer_norm: need input rank 3, got {:?}",
            x.shape()
        )));
    }
    let (_batch, channels, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::config(format!(
            "time_layer_norm: scale/shift shapes {:?}/{:?} must be [{channels}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut data = vec![0.0; x.numel()];
    let mut stats = Vec::new();
    kernels::time_norm_forward(&x.data(), &gamma.data(), &beta.data(), channels, t, eps, &mut data, &mut stats);
    let out = Tensor::op_output(data, x.shape(), &[x, gamma, beta]);
    let (x_, g_, b_, o_) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
    tape.record(out.needs_grad(), move || {
        let Some(g) = o_.grad() else { return };
        let mut gx = vec![0.0; x_.numel()];
        let mut ggamma = vec![0.0; g_.numel()];
        let mut gbeta = vec![0.0; b_.numel()];
        kernels::time_norm_backward(&x_.data(), &g_.data(), channels, t, &stats, &g, &mut gx, &mut ggamma, &mut gbeta);
        if x_.needs_grad() {
            x_.add_to_grad(&gx);
        }
        if g_.needs_grad() {
            g_.add_to_grad(&ggamma);
        }
        if b_.needs_grad() {
            b_.add_to_grad(&gbeta);
        }
    });
    Ok(out)
}

/// Selective state-space scan.
///
/// `u`, `delta`: `[batch, t, d_inner]`; `b_in`, `c_in`: `[batch, t, d_state]`;
/// `a`: `[d_inner, d_state]` (strictly negative); `d_skip`: `[d_inner]`.
/// Computes `h_t = exp(delta_t A) ⊙ h_{t-1} + (delta_t B_t) u_t` from
/// `h_0 = 0` and `y_t = <C_t, h_t> + D u_t`.
pub fn selective_scan(
    tape: &mut Tape,
    u: &Tensor,
    delta: &Tensor,
    b_in: &Tensor,
    c_in: &Tensor,
    a: &Tensor,
    d_skip: &Tensor,
) -> Result<Tensor> {
    if u.rank() != 3 {
        return Err(Error::config(format!(
            "selective_scan: input must be [batch, t, d_inner], got {:?}",
            u.shape()
        )));
    }
    let (batch, t, d_inner) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    require_same_shape("selective_scan (delta)", u, delta)?;
    if b_in.rank() != 3 || b_in.shape()[0] != batch || b_in.shape()[1] != t {
        return Err(Error::config(format!(
            "selective_scan: B_t shape {:?} must be [{batch}, {t}, d_state]",
            b_in.shape()
        )));
    }
    let d_state = b_in.shape()[2];
    require_same_shape("selective_scan (C_t)", b_in, c_in)?;
    if a.shape() != [d_inner, d_state] {
        return Err(Error::config(format!(
            "selective_scan: A shape {:?} must be [{d_inner}, {d_state}]",
            a.shape()
        )));
    }
    if d_skip.shape() != [d_inner] {
        return Err(Error::config(format!(
            "selective_scan: D shape {:?} must be [{d_inner}]",
            d_skip.shape()
        )));
    }
    if a.data().iter().any(|&v| v >= 0.0) {
        return Err(Error::config(
            "selective_scan: state matrix A must be strictly negative for a decaying state".to_string(),
        ));
    }
    let dims = ScanDims { batch, t, d_inner, d_state };
    let inputs = [u, delta, b_in, c_in, a, d_skip];
    let needs = inputs.iter().any(|i| i.needs_grad());
    let record = tape.is_active() && needs;
    let mut y = vec![0.0; batch * t * d_inner];
    let mut h_saved = if record {
        Some(vec![0.0; batch * t * d_inner * d_state])
    } else {
        None
    };
    kernels::scan_forward(
        &u.data(),
        &delta.data(),
        &b_in.data(),
        &c_in.data(),
        &a.data(),
        &d_skip.data(),
        &dims,
        &mut y,
        h_saved.as_deref_mut(),
    );
    let out = Tensor::op_output(y, &[batch, t, d_inner], &inputs);
    let (u_, dt_, b_, c_, a_, d_, o_) = (
        u.clone(),
        delta.clone(),
        b_in.clone(),
        c_in.clone(),
        a.clone(),
        d_skip.clone(),
        out.clone(),
    );
    tape.record(record, move || {
        let Some(g) = o_.grad() else { return };
        let h = h_saved.as_ref().expect("scan recorded without saved states");
        let mut gu = vec![0.0; u_.numel()];
        let mut gdt = vec![0.0; dt_.numel()];
        let mut gb = vec![0.0; b_.numel()];
        let mut gc = vec![0.0; c_.numel()];
        let mut ga = vec![0.0; a_.numel()];
        let mut gd = vec![0.0; d_.numel()];
        kernels::scan_backward(
            &g,
            &u_.data(),
            &dt_.data(),
            &b_.data(),
            &c_.data(),
            &a_.data(),
            &d_.data(),
            h,
            &dims,
            ScanGrads {
                gu: &mut gu,
                gdt: &mut gdt,
                gb: &mut gb,
                gc: &mut gc,
                ga: &mut ga,
                gd_skip: &mut gd,
            },
        );
        if u_.needs_grad() {
            u_.add_to_grad(&gu);
        }
        if dt_.needs_grad() {
            dt_.add_to_grad(&gdt);
        }
        if b_.needs_grad() {
            b_.add_to_grad(&gb);
        }
        if c_.needs_grad() {
            c_.add_to_grad(&gc);
        }
        if a_.needs_grad() {
            a_.add_to_grad(&ga);
        }
        if d_.needs_grad() {
            d_.add_to_grad(&gd);
        }
    });
    Ok(out)
}
