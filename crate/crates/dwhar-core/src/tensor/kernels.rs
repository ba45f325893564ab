//! Raw numeric kernels behind the tensor ops.
//!
//! Every kernel has a sequential body; the hot ones also have a rayon
//! variant behind the `parallel` feature. Both variants call the same
//! per-row function and every floating-point reduction keeps a fixed
//! summation order, so results are bitwise identical regardless of path or
//! worker count. Parallelism only ever writes disjoint output rows.
//!
//! Gradient kernels accumulate (`+=`) into caller-provided buffers; callers
//! pass freshly zeroed storage.

use crate::util::canonical_sum;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Outputs smaller than this stay on the sequential path even when the
/// `parallel` feature is enabled; forking has fixed overhead.
pub const PAR_MIN_ELEMS: usize = 8192;

#[inline]
fn run_rows_seq(out: &mut [f64], row_len: usize, f: impl Fn(usize, &mut [f64])) {
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

#[cfg(feature = "parallel")]
#[inline]
fn run_rows_par(out: &mut [f64], row_len: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    out.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[inline]
fn run_rows_auto(out: &mut [f64], row_len: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    #[cfg(feature = "parallel")]
    if out.len() >= PAR_MIN_ELEMS && row_len < out.len() {
        run_rows_par(out, row_len, f);
        return;
    }
    run_rows_seq(out, row_len, f);
}

// ---------------------------------------------------------------------------
// Grouped 1-D convolution
// ---------------------------------------------------------------------------

/// Dimensions of a grouped 1-D convolution. Input is `[batch, c_in, t_in]`,
/// weights `[c_out, c_in/groups, k]`, output `[batch, c_out, t_out]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_l: usize,
    pub pad_r: usize,
    pub groups: usize,
    pub t_out: usize,
}

impl ConvDims {
    #[inline]
    pub fn c_in_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    #[inline]
    pub fn c_out_per_group(&self) -> usize {
        self.c_out / self.groups
    }
}

/// `floor((t_in + pad_l + pad_r - k) / stride) + 1`, or `None` when the
/// padded input is shorter than the kernel.
pub fn conv_t_out(t_in: usize, k: usize, stride: usize, pad_l: usize, pad_r: usize) -> Option<usize> {
    let padded = t_in + pad_l + pad_r;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn conv_forward_one(b: usize, out_b: &mut [f64], x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) {
    let c_in_pg = d.c_in_per_group();
    let c_out_pg = d.c_out_per_group();
    let xb = &x[b * d.c_in * d.t_in..][..d.c_in * d.t_in];
    for co in 0..d.c_out {
        let g = co / c_out_pg;
        let w_co = &w[co * c_in_pg * d.k..][..c_in_pg * d.k];
        let out_row = &mut out_b[co * d.t_out..][..d.t_out];
        let base = bias.map_or(0.0, |bv| bv[co]);
        for (t, out_v) in out_row.iter_mut().enumerate() {
            let t0 = (t * d.stride) as isize - d.pad_l as isize;
            let mut acc = base;
            for cil in 0..c_in_pg {
                let xrow = &xb[(g * c_in_pg + cil) * d.t_in..][..d.t_in];
                let wrow = &w_co[cil * d.k..][..d.k];
                for (k, wv) in wrow.iter().enumerate() {
                    let ti = t0 + k as isize;
                    if ti >= 0 && (ti as usize) < d.t_in {
                        acc += wv * xrow[ti as usize];
                    }
                }
            }
            *out_v = acc;
        }
    }
}

pub fn conv1d_forward_seq(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims, out: &mut [f64]) {
    run_rows_seq(out, d.c_out * d.t_out, |b, row| conv_forward_one(b, row, x, w, bias, d));
}

#[cfg(feature = "parallel")]
pub fn conv1d_forward_par(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims, out: &mut [f64]) {
    run_rows_par(out, d.c_out * d.t_out, |b, row| conv_forward_one(b, row, x, w, bias, d));
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims, out: &mut [f64]) {
    run_rows_auto(out, d.c_out * d.t_out, |b, row| conv_forward_one(b, row, x, w, bias, d));
}

fn conv_backward_input_one(b: usize, gx_b: &mut [f64], gy: &[f64], w: &[f64], d: &ConvDims) {
    let c_in_pg = d.c_in_per_group();
    let c_out_pg = d.c_out_per_group();
    let gy_b = &gy[b * d.c_out * d.t_out..][..d.c_out * d.t_out];
    for co in 0..d.c_out {
        let g = co / c_out_pg;
        let w_co = &w[co * c_in_pg * d.k..][..c_in_pg * d.k];
        let gy_row = &gy_b[co * d.t_out..][..d.t_out];
        for (t, gv) in gy_row.iter().enumerate() {
            let t0 = (t * d.stride) as isize - d.pad_l as isize;
            for cil in 0..c_in_pg {
                let gx_row = (g * c_in_pg + cil) * d.t_in;
                let wrow = &w_co[cil * d.k..][..d.k];
                for (k, wv) in wrow.iter().enumerate() {
                    let ti = t0 + k as isize;
                    if ti >= 0 && (ti as usize) < d.t_in {
                        gx_b[gx_row + ti as usize] += wv * gv;
                    }
                }
            }
        }
    }
}

/// dL/dinput. `gx` must be zeroed `[batch, c_in, t_in]`.
pub fn conv1d_backward_input(gy: &[f64], w: &[f64], d: &ConvDims, gx: &mut [f64]) {
    run_rows_auto(gx, d.c_in * d.t_in, |b, row| conv_backward_input_one(b, row, gy, w, d));
}

fn conv_backward_weight_row(co: usize, gw_row: &mut [f64], gy: &[f64], x: &[f64], d: &ConvDims) {
    let c_in_pg = d.c_in_per_group();
    let c_out_pg = d.c_out_per_group();
    let g = co / c_out_pg;
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.t_in..][..d.c_in * d.t_in];
        let gy_row = &gy[(b * d.c_out + co) * d.t_out..][..d.t_out];
        for (t, gv) in gy_row.iter().enumerate() {
            let t0 = (t * d.stride) as isize - d.pad_l as isize;
            for cil in 0..c_in_pg {
                let xrow = &xb[(g * c_in_pg + cil) * d.t_in..][..d.t_in];
                let gw_sub = &mut gw_row[cil * d.k..][..d.k];
                for (k, gw_v) in gw_sub.iter_mut().enumerate() {
                    let ti = t0 + k as isize;
                    if ti >= 0 && (ti as usize) < d.t_in {
                        *gw_v += gv * xrow[ti as usize];
                    }
                }
            }
        }
    }
}

/// dL/dweight. `gw` must be zeroed `[c_out, c_in/groups, k]`. Batch and time
/// are reduced sequentially inside each weight row, keeping order fixed.
pub fn conv1d_backward_weight(gy: &[f64], x: &[f64], d: &ConvDims, gw: &mut [f64]) {
    run_rows_auto(gw, d.c_in_per_group() * d.k, |co, row| {
        conv_backward_weight_row(co, row, gy, x, d)
    });
}

/// dL/dbias. `gb` must be zeroed `[c_out]`.
pub fn conv1d_backward_bias(gy: &[f64], d: &ConvDims, gb: &mut [f64]) {
    for b in 0..d.batch {
        for (co, gb_v) in gb.iter_mut().enumerate() {
            let gy_row = &gy[(b * d.c_out + co) * d.t_out..][..d.t_out];
            for gv in gy_row {
                *gb_v += gv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Batched matrix multiplication
// ---------------------------------------------------------------------------

/// `a` is `[batch, m, k]`; `b` is `[batch, k, n]` when `b_batched`, else
/// `[k, n]` shared across the batch. Output `[batch, m, n]`.
#[derive(Clone, Copy, Debug)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub b_batched: bool,
}

fn matmul_row(r: usize, out_row: &mut [f64], a: &[f64], b: &[f64], d: &MatmulDims) {
    let bi = r / d.m;
    let a_row = &a[r * d.k..][..d.k];
    let b_base = if d.b_batched { bi * d.k * d.n } else { 0 };
    out_row.fill(0.0);
    for (q, av) in a_row.iter().enumerate() {
        let b_row = &b[b_base + q * d.n..][..d.n];
        for (o, bv) in out_row.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

fn matmul_row_canonical(r: usize, out_row: &mut [f64], a: &[f64], b: &[f64], d: &MatmulDims) {
    let bi = r / d.m;
    let a_row = &a[r * d.k..][..d.k];
    let b_base = if d.b_batched { bi * d.k * d.n } else { 0 };
    let mut scratch = vec![0.0; d.k];
    for (j, o) in out_row.iter_mut().enumerate() {
        for (q, s) in scratch.iter_mut().enumerate() {
            *s = a_row[q] * b[b_base + q * d.n + j];
        }
        *o = canonical_sum(&mut scratch);
    }
}

pub fn matmul_forward_seq(a: &[f64], b: &[f64], d: &MatmulDims, canonical: bool, out: &mut [f64]) {
    if canonical {
        run_rows_seq(out, d.n, |r, row| matmul_row_canonical(r, row, a, b, d));
    } else {
        run_rows_seq(out, d.n, |r, row| matmul_row(r, row, a, b, d));
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_forward_par(a: &[f64], b: &[f64], d: &MatmulDims, canonical: bool, out: &mut [f64]) {
    if canonical {
        run_rows_par(out, d.n, |r, row| matmul_row_canonical(r, row, a, b, d));
    } else {
        run_rows_par(out, d.n, |r, row| matmul_row(r, row, a, b, d));
    }
}

pub fn matmul_forward(a: &[f64], b: &[f64], d: &MatmulDims, canonical: bool, out: &mut [f64]) {
    if canonical {
        run_rows_auto(out, d.n, |r, row| matmul_row_canonical(r, row, a, b, d));
    } else {
        run_rows_auto(out, d.n, |r, row| matmul_row(r, row, a, b, d));
    }
}

/// dL/da: `ga[bi,i,q] += sum_j gy[bi,i,j] * b[bi?,q,j]`. `ga` zeroed by caller.
pub fn matmul_backward_a(gy: &[f64], b: &[f64], d: &MatmulDims, ga: &mut [f64]) {
    let dm = *d;
    run_rows_auto(ga, d.k, move |r, ga_row| {
        let bi = r / dm.m;
        let gy_row = &gy[r * dm.n..][..dm.n];
        let b_base = if dm.b_batched { bi * dm.k * dm.n } else { 0 };
        for (q, gq) in ga_row.iter_mut().enumerate() {
            let b_row = &b[b_base + q * dm.n..][..dm.n];
            let mut acc = 0.0;
            for (gv, bv) in gy_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *gq += acc;
        }
    });
}

/// dL/db. For batched `b`, `gb` is `[batch, k, n]`; otherwise `[k, n]` and
/// the batch is reduced sequentially per output row.
pub fn matmul_backward_b(gy: &[f64], a: &[f64], d: &MatmulDims, gb: &mut [f64]) {
    let dm = *d;
    if d.b_batched {
        run_rows_auto(gb, d.k * d.n, move |bi, gb_b| {
            for i in 0..dm.m {
                let a_row = &a[(bi * dm.m + i) * dm.k..][..dm.k];
                let gy_row = &gy[(bi * dm.m + i) * dm.n..][..dm.n];
                for (q, av) in a_row.iter().enumerate() {
                    let gb_row = &mut gb_b[q * dm.n..][..dm.n];
                    for (gbv, gv) in gb_row.iter_mut().zip(gy_row) {
                        *gbv += av * gv;
                    }
                }
            }
        });
    } else {
        run_rows_auto(gb, d.n, move |q, gb_row| {
            for bi in 0..dm.batch {
                for i in 0..dm.m {
                    let av = a[(bi * dm.m + i) * dm.k + q];
                    let gy_row = &gy[(bi * dm.m + i) * dm.n..][..dm.n];
                    for (gbv, gv) in gb_row.iter_mut().zip(gy_row) {
                        *gbv += av * gv;
                    }
                }
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Linear layer (y = x W^T + bias), weight stored [d_out, d_in]
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct LinearDims {
    pub rows: usize,
    pub d_in: usize,
    pub d_out: usize,
}

fn linear_row(r: usize, out_row: &mut [f64], x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &LinearDims) {
    let x_row = &x[r * d.d_in..][..d.d_in];
    for (o, out_v) in out_row.iter_mut().enumerate() {
        let w_row = &w[o * d.d_in..][..d.d_in];
        let mut acc = bias.map_or(0.0, |bv| bv[o]);
        for (xv, wv) in x_row.iter().zip(w_row) {
            acc += xv * wv;
        }
        *out_v = acc;
    }
}

pub fn linear_forward_seq(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &LinearDims, out: &mut [f64]) {
    run_rows_seq(out, d.d_out, |r, row| linear_row(r, row, x, w, bias, d));
}

#[cfg(feature = "parallel")]
pub fn linear_forward_par(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &LinearDims, out: &mut [f64]) {
    run_rows_par(out, d.d_out, |r, row| linear_row(r, row, x, w, bias, d));
}

pub fn linear_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &LinearDims, out: &mut [f64]) {
    run_rows_auto(out, d.d_out, |r, row| linear_row(r, row, x, w, bias, d));
}

/// dL/dx: `gx[r,i] += sum_o gy[r,o] * w[o,i]`. `gx` zeroed by caller.
pub fn linear_backward_input(gy: &[f64], w: &[f64], d: &LinearDims, gx: &mut [f64]) {
    let dm = *d;
    run_rows_auto(gx, d.d_in, move |r, gx_row| {
        let gy_row = &gy[r * dm.d_out..][..dm.d_out];
        for (o, gv) in gy_row.iter().enumerate() {
            let w_row = &w[o * dm.d_in..][..dm.d_in];
            for (gxv, wv) in gx_row.iter_mut().zip(w_row) {
                *gxv += gv * wv;
            }
        }
    });
}

/// dL/dw: `gw[o,i] += sum_r gy[r,o] * x[r,i]`; rows reduced sequentially.
pub fn linear_backward_weight(gy: &[f64], x: &[f64], d: &LinearDims, gw: &mut [f64]) {
    let dm = *d;
    run_rows_auto(gw, d.d_in, move |o, gw_row| {
        for r in 0..dm.rows {
            let gv = gy[r * dm.d_out + o];
            let x_row = &x[r * dm.d_in..][..dm.d_in];
            for (gwv, xv) in gw_row.iter_mut().zip(x_row) {
                *gwv += gv * xv;
            }
        }
    });
}

/// dL/dbias: `gb[o] += sum_r gy[r,o]`.
pub fn linear_backward_bias(gy: &[f64], d: &LinearDims, gb: &mut [f64]) {
    for r in 0..d.rows {
        let gy_row = &gy[r * d.d_out..][..d.d_out];
        for (gbv, gv) in gb.iter_mut().zip(gy_row) {
            *gbv += gv;
        }
    }
}

// ---------------------------------------------------------------------------
// Selective state-space scan
// ---------------------------------------------------------------------------

/// `u`, `dt`: `[batch, t, d_inner]`; `b_in`, `c_in`: `[batch, t, d_state]`;
/// `a`: `[d_inner, d_state]`; `d_skip`: `[d_inner]`.
#[derive(Clone, Copy, Debug)]
pub struct ScanDims {
    pub batch: usize,
    pub t: usize,
    pub d_inner: usize,
    pub d_state: usize,
}

/// One batch lane of the recurrence
/// `h_t = exp(dt*A) ⊙ h_{t-1} + (dt*B_t) u_t`, `y_t = <C_t, h_t> + D u_t`,
/// with `h_{-1} = 0`. Optionally stores every `h_t` for the backward pass.
fn scan_forward_one(
    b: usize,
    y_b: &mut [f64],
    mut h_b: Option<&mut [f64]>,
    u: &[f64],
    dt: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    d: &ScanDims,
) {
    let (di, ds) = (d.d_inner, d.d_state);
    let mut h = vec![0.0; di * ds];
    for t in 0..d.t {
        let bt = b * d.t + t;
        let u_t = &u[bt * di..][..di];
        let dt_t = &dt[bt * di..][..di];
        let b_t = &b_in[bt * ds..][..ds];
        let c_t = &c_in[bt * ds..][..ds];
        for ch in 0..di {
            let a_row = &a[ch * ds..][..ds];
            let h_row = &mut h[ch * ds..][..ds];
            let dt_v = dt_t[ch];
            let u_v = u_t[ch];
            let mut y = d_skip[ch] * u_v;
            for n in 0..ds {
                let da = (dt_v * a_row[n]).exp();
                let hn = da * h_row[n] + dt_v * b_t[n] * u_v;
                h_row[n] = hn;
                y += c_t[n] * hn;
            }
            y_b[t * di + ch] = y;
            if let Some(hb) = h_b.as_deref_mut() {
                hb[(t * di + ch) * ds..][..ds].copy_from_slice(h_row);
            }
        }
    }
}

pub fn scan_forward_seq(
    u: &[f64],
    dt: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    d: &ScanDims,
    y: &mut [f64],
    h_saved: Option<&mut [f64]>,
) {
    let row = d.t * d.d_inner;
    match h_saved {
        Some(h) => {
            for (b, (y_b, h_b)) in y.chunks_mut(row).zip(h.chunks_mut(row * d.d_state)).enumerate() {
                scan_forward_one(b, y_b, Some(h_b), u, dt, b_in, c_in, a, d_skip, d);
            }
        }
        None => {
            for (b, y_b) in y.chunks_mut(row).enumerate() {
                scan_forward_one(b, y_b, None, u, dt, b_in, c_in, a, d_skip, d);
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn scan_forward_par(
    u: &[f64],
    dt: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    d: &ScanDims,
    y: &mut [f64],
    h_saved: Option<&mut [f64]>,
) {
    let row = d.t * d.d_inner;
    match h_saved {
        Some(h) => {
            y.par_chunks_mut(row)
                .zip(h.par_chunks_mut(row * d.d_state))
                .enumerate()
                .for_each(|(b, (y_b, h_b))| {
                    scan_forward_one(b, y_b, Some(h_b), u, dt, b_in, c_in, a, d_skip, d)
                });
        }
        None => {
            y.par_chunks_mut(row)
                .enumerate()
                .for_each(|(b, y_b)| scan_forward_one(b, y_b, None, u, dt, b_in, c_in, a, d_skip, d));
        }
    }
}

pub fn scan_forward(
    u: &[f64],
    dt: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    d: &ScanDims,
    y: &mut [f64],
    h_saved: Option<&mut [f64]>,
) {
    #[cfg(feature = "parallel")]
    if y.len() >= PAR_MIN_ELEMS && d.batch > 1 {
        scan_forward_par(u, dt, b_in, c_in, a, d_skip, d, y, h_saved);
        return;
    }
    scan_forward_seq(u, dt, b_in, c_in, a, d_skip, d, y, h_saved);
}

/// Gradient buffers for the scan, all zeroed by the caller. `ga_partial`
/// (`[batch, d_inner, d_state]`) and `gd_partial` (`[batch, d_inner]`) hold
/// per-batch contributions that [`scan_backward`] reduces in batch order so
/// the result does not depend on worker count.
pub struct ScanGrads<'a> {
    pub gu: &'a mut [f64],
    pub gdt: &'a mut [f64],
    pub gb: &'a mut [f64],
    pub gc: &'a mut [f64],
    pub ga: &'a mut [f64],
    pub gd_skip: &'a mut [f64],
}

#[allow(clippy::too_many_arguments)]
fn scan_backward_one(
    b: usize,
    gy: &[f64],
    u: &[f64],
    dt: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    h_saved: &[f64],
    d: &ScanDims,
    gu_b: &mut [f64],
    gdt_b: &mut [f64],
    gb_b: &mut [f64],
    gc_b: &mut [f64],
    ga_b: &mut [f64],
    gd_b: &mut [f64],
) {
    let (di, ds) = (d.d_inner, d.d_state);
    let mut hbar = vec![0.0; ds];
    for ch in 0..di {
        hbar.fill(0.0);
        let a_row = &a[ch * ds..][..ds];
        for t in (0..d.t).rev() {
            let bt = b * d.t + t;
            let gy_v = gy[bt * di + ch];
            let u_v = u[bt * di + ch];
            let dt_v = dt[bt * di + ch];
            let b_t = &b_in[bt * ds..][..ds];
            let c_t = &c_in[bt * ds..][..ds];
            let h_t = &h_saved[(bt * di + ch) * ds..][..ds];
            // y_t = <C_t, h_t> + D u_t
            for n in 0..ds {
                gc_b[t * ds + n] += gy_v * h_t[n];
                hbar[n] += gy_v * c_t[n];
            }
            gd_b[ch] += gy_v * u_v;
            let mut gu_acc = gy_v * d_skip[ch];
            // h_t = exp(dt*A) ⊙ h_{t-1} + dt*B_t*u_t
            let mut gdt_acc = 0.0;
            for n in 0..ds {
                let da = (dt_v * a_row[n]).exp();
                let hp = if t > 0 {
                    h_saved[((bt - 1) * di + ch) * ds + n]
                } else {
                    0.0
                };
                gdt_acc += hbar[n] * (a_row[n] * da * hp + b_t[n] * u_v);
                ga_b[ch * ds + n] += hbar[n] * dt_v * da * hp;
                gb_b[t * ds + n] += hbar[n] * dt_v * u_v;
                gu_acc += hbar[n] * dt_v * b_t[n];
                hbar[n] *= da;
            }
            gdt_b[t * di + ch] += gdt_acc;
            gu_b[t * di + ch] += gu_acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn scan_backward(
    gy: &[f64],
    u: &[f64],
    dt: &[f64],
    b_in: &[f64],
    c_in: &[f64],
    a: &[f64],
    d_skip: &[f64],
    h_saved: &[f64],
    d: &ScanDims,
    grads: ScanGrads<'_>,
) {
    let (di, ds) = (d.d_inner, d.d_state);
    let lane = d.t * di;
    let state_lane = d.t * ds;
    let mut ga_partial = vec![0.0; d.batch * di * ds];
    let mut gd_partial = vec![0.0; d.batch * di];

    let run = |b: usize,
               gu_b: &mut [f64],
               gdt_b: &mut [f64],
               gb_b: &mut [f64],
               gc_b: &mut [f64],
               ga_b: &mut [f64],
               gd_b: &mut [f64]| {
        scan_backward_one(b, gy, u, dt, b_in, c_in, a, d_skip, h_saved, d, gu_b, gdt_b, gb_b, gc_b, ga_b, gd_b)
    };

    #[cfg(feature = "parallel")]
    let parallel = gy.len() >= PAR_MIN_ELEMS && d.batch > 1;
    #[cfg(feature = "parallel")]
    if parallel {
        grads
            .gu
            .par_chunks_mut(lane)
            .zip(grads.gdt.par_chunks_mut(lane))
            .zip(grads.gb.par_chunks_mut(state_lane))
            .zip(grads.gc.par_chunks_mut(state_lane))
            .zip(ga_partial.par_chunks_mut(di * ds))
            .zip(gd_partial.par_chunks_mut(di))
            .enumerate()
            .for_each(|(b, (((((gu_b, gdt_b), gb_b), gc_b), ga_b), gd_b))| {
                run(b, gu_b, gdt_b, gb_b, gc_b, ga_b, gd_b)
            });
    }
    #[cfg(feature = "parallel")]
    let done = parallel;
    #[cfg(not(feature = "parallel"))]
    let done = false;

    if !done {
        for b in 0..d.batch {
            run(
                b,
                &mut grads.gu[b * lane..][..lane],
                &mut grads.gdt[b * lane..][..lane],
                &mut grads.gb[b * state_lane..][..state_lane],
                &mut grads.gc[b * state_lane..][..state_lane],
                &mut ga_partial[b * di * ds..][..di * ds],
                &mut gd_partial[b * di..][..di],
            );
        }
    }

    // Reduce per-batch partials in fixed batch order.
    for b in 0..d.batch {
        let ga_b = &ga_partial[b * di * ds..][..di * ds];
        for (g, p) in grads.ga.iter_mut().zip(ga_b) {
            *g += p;
        }
        let gd_b = &gd_partial[b * di..][..di];
        for (g, p) in grads.gd_skip.iter_mut().zip(gd_b) {
            *g += p;
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax along an axis
// ---------------------------------------------------------------------------

pub struct AxisLayout {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

pub fn axis_layout(shape: &[usize], axis: usize) -> AxisLayout {
    AxisLayout {
        outer: shape[..axis].iter().product(),
        len: shape[axis],
        inner: shape[axis + 1..].iter().product(),
    }
}

fn softmax_contiguous_row(x_row: &[f64], out_row: &mut [f64]) {
    let m = x_row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    for (o, xv) in out_row.iter_mut().zip(x_row) {
        *o = (xv - m).exp();
    }
    let mut scratch = out_row.to_vec();
    let denom = canonical_sum(&mut scratch);
    for o in out_row.iter_mut() {
        *o /= denom;
    }
}

/// Numerically stable softmax along `axis` (max subtraction; canonical-order
/// denominator so permuting the axis permutes outputs bitwise-identically).
pub fn softmax_forward(x: &[f64], shape: &[usize], axis: usize, out: &mut [f64]) {
    let l = axis_layout(shape, axis);
    if l.inner == 1 {
        let body = |r: usize, out_row: &mut [f64]| {
            softmax_contiguous_row(&x[r * l.len..][..l.len], out_row);
        };
        run_rows_auto(out, l.len, body);
        return;
    }
    let mut row_in = vec![0.0; l.len];
    let mut row_out = vec![0.0; l.len];
    for o in 0..l.outer {
        for i in 0..l.inner {
            let base = o * l.len * l.inner + i;
            for (j, r) in row_in.iter_mut().enumerate() {
                *r = x[base + j * l.inner];
            }
            softmax_contiguous_row(&row_in, &mut row_out);
            for (j, r) in row_out.iter().enumerate() {
                out[base + j * l.inner] = *r;
            }
        }
    }
}

/// dL/dx for softmax with saved output `s`: `gx = s ⊙ (gy - <gy, s>)` per
/// row. `gx` zeroed by caller.
pub fn softmax_backward(s: &[f64], gy: &[f64], shape: &[usize], axis: usize, gx: &mut [f64]) {
    let l = axis_layout(shape, axis);
    for o in 0..l.outer {
        for i in 0..l.inner {
            let base = o * l.len * l.inner + i;
            let mut dot = 0.0;
            for j in 0..l.len {
                let idx = base + j * l.inner;
                dot += gy[idx] * s[idx];
            }
            for j in 0..l.len {
                let idx = base + j * l.inner;
                gx[idx] += s[idx] * (gy[idx] - dot);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Per-channel normalization over the time axis
// ---------------------------------------------------------------------------

/// x is `[rows, t]` where `rows = batch * channels` and the channel of row
/// `r` is `r % channels`. Normalizes each row to zero mean / unit variance
/// (population variance, epsilon-stabilized), then applies the channel's
/// scale and shift. Saves per-row `(mean, inv_std)` for backward.
pub fn time_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    channels: usize,
    t: usize,
    eps: f64,
    out: &mut [f64],
    stats: &mut Vec<(f64, f64)>,
) {
    stats.clear();
    for (r, (x_row, out_row)) in x.chunks(t).zip(out.chunks_mut(t)).enumerate() {
        let c = r % channels;
        let mean = x_row.iter().sum::<f64>() / t as f64;
        let var = x_row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (o, xv) in out_row.iter_mut().zip(x_row) {
            *o = gamma[c] * (xv - mean) * inv_std + beta[c];
        }
        stats.push((mean, inv_std));
    }
}

/// Standard layer-norm backward per row; gamma/beta gradients reduce over
/// rows sequentially. All gradient buffers zeroed by caller.
#[allow(clippy::too_many_arguments)]
pub fn time_norm_backward(
    x: &[f64],
    gamma: &[f64],
    channels: usize,
    t: usize,
    stats: &[(f64, f64)],
    gy: &[f64],
    gx: &mut [f64],
    ggamma: &mut [f64],
    gbeta: &mut [f64],
) {
    let tf = t as f64;
    for r in 0..x.len() / t {
        let c = r % channels;
        let (mean, inv_std) = stats[r];
        let x_row = &x[r * t..][..t];
        let gy_row = &gy[r * t..][..t];
        let gx_row = &mut gx[r * t..][..t];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for j in 0..t {
            let xhat = (x_row[j] - mean) * inv_std;
            sum_g += gy_row[j];
            sum_gx += gy_row[j] * xhat;
            ggamma[c] += gy_row[j] * xhat;
            gbeta[c] += gy_row[j];
        }
        for j in 0..t {
            let xhat = (x_row[j] - mean) * inv_std;
            gx_row[j] += gamma[c] * inv_std * (gy_row[j] - sum_g / tf - xhat * sum_gx / tf);
        }
    }
}
