//! The network stages: per-variable embedding, local temporal extraction,
//! channel/variable fusion, pooled selective-SSM aggregation, cross-sensor
//! attention, and the classifier head.

use super::config::ModelConfig;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Tape, Tensor};

/// Epsilon of the per-channel time normalization preceding each fusion block.
pub const NORM_EPS: f64 = 1e-5;

fn expect_shape(stage: &str, x: &Tensor, expected: &[usize]) -> Result<()> {
    if x.shape() != expected {
        return Err(Error::config(format!(
            "{stage}: input shape {:?} does not match the configuration (expected {expected:?})",
            x.shape()
        )));
    }
    Ok(())
}

/// Per-(sensor, variable) embedding: a grouped 1-D convolution with one
/// distinct kernel per (sensor, variable) pair, stride `S`, right-padded so
/// every window yields `T = ceil(L/S)` steps.
///
/// `[B, N, M, L] -> [B, N, M, D, T]`
pub fn mse_embed(tape: &mut Tape, x: &Tensor, cfg: &ModelConfig, state: &ModelState) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::config(format!(
            "mse_embed: input must be [batch, sensors, variables, time], got {:?}",
            x.shape()
        )));
    }
    let b = x.shape()[0];
    expect_shape("mse_embed", x, &[b, cfg.n_sensors, cfg.m_vars, cfg.window_len])?;
    let nm = cfg.n_sensors * cfg.m_vars;
    let xr = ops::reshape(tape, x, &[b, nm, cfg.window_len])?;
    let y = ops::conv1d_grouped(
        tape,
        &xr,
        state.param("mse.weight")?,
        Some(state.param("mse.bias")?),
        cfg.mse_stride,
        (0, cfg.mse_pad_r()),
        nm,
    )?;
    ops::reshape(tape, &y, &[b, cfg.n_sensors, cfg.m_vars, cfg.d_embed, cfg.t_steps()])
}

/// Depth-wise temporal convolution with one kernel per (variable, channel)
/// pair, shared across sensors; symmetric padding preserves `T`.
///
/// `[B, N, M, D, T] -> [B, N, M*D, T]`
pub fn lte_extract(tape: &mut Tape, x_emb: &Tensor, cfg: &ModelConfig, state: &ModelState) -> Result<Tensor> {
    if x_emb.rank() != 5 {
        return Err(Error::config(format!(
            "lte_extract: input must be [batch, sensors, variables, channels, time], got {:?}",
            x_emb.shape()
        )));
    }
    let b = x_emb.shape()[0];
    let t = cfg.t_steps();
    expect_shape("lte_extract", x_emb, &[b, cfg.n_sensors, cfg.m_vars, cfg.d_embed, t])?;
    let md = cfg.m_vars * cfg.d_embed;
    let xr = ops::reshape(tape, x_emb, &[b * cfg.n_sensors, md, t])?;
    let pad = (cfg.lte_kernel - 1) / 2;
    let y = ops::conv1d_grouped(
        tape,
        &xr,
        state.param("lte.weight")?,
        Some(state.param("lte.bias")?),
        1,
        (pad, pad),
        md,
    )?;
    ops::reshape(tape, &y, &[b, cfg.n_sensors, md, t])
}

/// Cross-channel fusion within each variable: pre-normalized inverted
/// bottleneck of two grouped point-wise convolutions (groups = variables)
/// with a GELU between, plus the residual input.
///
/// `[B*N, M*D, T] -> [B*N, M*D, T]` (variable-major channels, index m*D+d)
pub fn ccf_fuse(tape: &mut Tape, x_dw: &Tensor, cfg: &ModelConfig, state: &ModelState) -> Result<Tensor> {
    if x_dw.rank() != 3 || x_dw.shape()[1] != cfg.m_vars * cfg.d_embed {
        return Err(Error::config(format!(
            "ccf_fuse: input shape {:?} must be [batch*sensors, m_vars*d_embed = {}, t]",
            x_dw.shape(),
            cfg.m_vars * cfg.d_embed
        )));
    }
    let h = ops::time_layer_norm(
        tape,
        x_dw,
        state.param("ccf.norm.gamma")?,
        state.param("ccf.norm.beta")?,
        NORM_EPS,
    )?;
    let h = ops::conv1d_grouped(
        tape,
        &h,
        state.param("ccf.w1")?,
        Some(state.param("ccf.b1")?),
        1,
        (0, 0),
        cfg.m_vars,
    )?;
    let h = ops::gelu(tape, &h)?;
    let h = ops::conv1d_grouped(
        tape,
        &h,
        state.param("ccf.w2")?,
        Some(state.param("ccf.b2")?),
        1,
        (0, 0),
        cfg.m_vars,
    )?;
    ops::add(tape, x_dw, &h)
}

/// Cross-variable fusion within each channel: transposes the channel axis to
/// channel-major layout (index d*M+m), then applies the same pre-normalized
/// grouped bottleneck with groups = channels, plus the residual (transposed)
/// input. Output stays channel-major.
///
/// `[B*N, M*D, T] -> [B*N, D*M, T]`
pub fn cvf_fuse(tape: &mut Tape, x_ccf: &Tensor, cfg: &ModelConfig, state: &ModelState) -> Result<Tensor> {
    let (m, d) = (cfg.m_vars, cfg.d_embed);
    if x_ccf.rank() != 3 || x_ccf.shape()[1] != m * d {
        return Err(Error::config(format!(
            "cvf_fuse: input shape {:?} must be [batch*sensors, m_vars*d_embed = {}, t]",
            x_ccf.shape(),
            m * d
        )));
    }
    let (bn, t) = (x_ccf.shape()[0], x_ccf.shape()[2]);
    let split = ops::reshape(tape, x_ccf, &[bn, m, d, t])?;
    let swapped = ops::permute(tape, &split, &[0, 2, 1, 3])?;
    let xcm = ops::reshape(tape, &swapped, &[bn, d * m, t])?;
    let h = ops::time_layer_norm(
        tape,
        &xcm,
        state.param("cvf.norm.gamma")?,
        state.param("cvf.norm.beta")?,
        NORM_EPS,
    )?;
    let h = ops::conv1d_grouped(
        tape,
        &h,
        state.param("cvf.w1")?,
        Some(state.param("cvf.b1")?),
        1,
        (0, 0),
        d,
    )?;
    let h = ops::gelu(tape, &h)?;
    let h = ops::conv1d_grouped(
        tape,
        &h,
        state.param("cvf.w2")?,
        Some(state.param("cvf.b2")?),
        1,
        (0, 0),
        d,
    )?;
    ops::add(tape, &xcm, &h)
}

/// Mean over the variable index within each channel (channel-major layout).
/// The mean is order-canonical, so it is exactly invariant under any
/// permutation of the variables inside a channel.
///
/// `[B*N, D*M, T] -> [B*N, D, T]`
pub fn gta_pool(tape: &mut Tape, x_cvf: &Tensor, m_vars: usize) -> Result<Tensor> {
    if x_cvf.rank() != 3 || x_cvf.shape()[1] % m_vars != 0 {
        return Err(Error::config(format!(
            "gta_pool: input shape {:?} must be [batch*sensors, d_embed*m_vars, t] with m_vars = {m_vars}",
            x_cvf.shape()
        )));
    }
    let (bn, dm, t) = (x_cvf.shape()[0], x_cvf.shape()[1], x_cvf.shape()[2]);
    let d = dm / m_vars;
    let split = ops::reshape(tape, x_cvf, &[bn, d, m_vars, t])?;
    ops::mean_axis(tape, &split, 2)
}

/// Selective-SSM block over each sensor's pooled sequence: input projection
/// to the inner width, causal depth-wise local convolution, SiLU, then
/// data-dependent step/input/output projections feeding the selective scan,
/// a SiLU gate from a parallel projection, and the output projection.
/// Sensors travel independently through the folded batch axis.
///
/// `[B*N, D, T] -> [B*N, D, T]`
pub fn mamba_block(tape: &mut Tape, x_gap: &Tensor, cfg: &ModelConfig, state: &ModelState) -> Result<Tensor> {
    if x_gap.rank() != 3 || x_gap.shape()[1] != cfg.d_embed {
        return Err(Error::config(format!(
            "mamba_block: input shape {:?} must be [batch*sensors, d_embed = {}, t]",
            x_gap.shape(),
            cfg.d_embed
        )));
    }
    let xt = ops::permute(tape, x_gap, &[0, 2, 1])?; // [B', T, D]
    let xz = ops::linear(tape, &xt, state.param("mamba.in_proj")?, None)?;
    let z = ops::linear(tape, &xt, state.param("mamba.gate_proj")?, None)?;
    let xc = ops::permute(tape, &xz, &[0, 2, 1])?; // [B', D_inner, T]
    let xc = ops::conv1d_grouped(
        tape,
        &xc,
        state.param("mamba.conv.weight")?,
        Some(state.param("mamba.conv.bias")?),
        1,
        (cfg.d_conv - 1, 0),
        cfg.d_inner(),
    )?;
    let u = ops::permute(tape, &xc, &[0, 2, 1])?;
    let u = ops::silu(tape, &u)?; // [B', T, D_inner]
    let dt_lin = ops::linear(
        tape,
        &u,
        state.param("mamba.dt_proj.weight")?,
        Some(state.param("mamba.dt_proj.bias")?),
    )?;
    let dt = ops::softplus(tape, &dt_lin)?;
    let b_t = ops::linear(tape, &u, state.param("mamba.b_proj")?, None)?;
    let c_t = ops::linear(tape, &u, state.param("mamba.c_proj")?, None)?;
    let a_exp = ops::exp(tape, state.param("mamba.a_log")?)?;
    let a = ops::scale(tape, &a_exp, -1.0)?;
    let y = ops::selective_scan(tape, &u, &dt, &b_t, &c_t, &a, state.param("mamba.d_skip")?)?;
    let gate = ops::silu(tape, &z)?;
    let gated = ops::mul(tape, &y, &gate)?;
    let out = ops::linear(tape, &gated, state.param("mamba.out_proj")?, None)?;
    ops::permute(tape, &out, &[0, 2, 1])
}

/// Multi-head self-attention across sensor tokens (each sensor's flattened
/// feature vector is one token), residual added; logits are the raw
/// query-key dot products unless `attn_scaled` turns on 1/sqrt(head_dim).
/// Returns the refined tokens and the head-wise attention matrices.
///
/// `[B, N, D*T] -> ([B, N, D*T], [B, H, N, N])`
pub fn csi_attend(
    tape: &mut Tape,
    x_mb: &Tensor,
    cfg: &ModelConfig,
    state: &ModelState,
) -> Result<(Tensor, Tensor)> {
    let f = cfg.token_len();
    if x_mb.rank() != 3 || x_mb.shape()[1] != cfg.n_sensors || x_mb.shape()[2] != f {
        return Err(Error::config(format!(
            "csi_attend: input shape {:?} must be [batch, n_sensors = {}, d_embed*t = {f}]",
            x_mb.shape(),
            cfg.n_sensors
        )));
    }
    let (b, n, h, hd) = (x_mb.shape()[0], cfg.n_sensors, cfg.n_heads, cfg.head_dim());
    let q = ops::linear(tape, x_mb, state.param("csi.q")?, None)?;
    let k = ops::linear(tape, x_mb, state.param("csi.k")?, None)?;
    let v = ops::linear(tape, x_mb, state.param("csi.v")?, None)?;
    let split_heads = |tape: &mut Tape, t: &Tensor| -> Result<Tensor> {
        let r = ops::reshape(tape, t, &[b, n, h, hd])?;
        ops::permute(tape, &r, &[0, 2, 1, 3])
    };
    let qh = split_heads(tape, &q)?;
    let kh = split_heads(tape, &k)?;
    let vh = split_heads(tape, &v)?;
    let kt = ops::permute(tape, &kh, &[0, 1, 3, 2])?;
    let mut logits = ops::matmul(tape, &qh, &kt)?; // [B, H, N, N]
    if cfg.attn_scaled {
        logits = ops::scale(tape, &logits, 1.0 / (hd as f64).sqrt())?;
    }
    let attn = ops::softmax_axis(tape, &logits, 3)?;
    let ctx = ops::matmul_canonical(tape, &attn, &vh)?; // [B, H, N, hd]
    let merged = ops::permute(tape, &ctx, &[0, 2, 1, 3])?;
    let merged = ops::reshape(tape, &merged, &[b, n, f])?;
    let o = ops::linear(tape, &merged, state.param("csi.w")?, None)?;
    let out = ops::add(tape, x_mb, &o)?;
    Ok((out, attn))
}

/// Flattens all sensor tokens and applies the fully connected head.
///
/// `[B, N, D*T] -> [B, C]`
pub fn classify_logits(tape: &mut Tape, x_csi: &Tensor, cfg: &ModelConfig, state: &ModelState) -> Result<Tensor> {
    let f = cfg.token_len();
    if x_csi.rank() != 3 || x_csi.shape()[1] != cfg.n_sensors || x_csi.shape()[2] != f {
        return Err(Error::config(format!(
            "classify_logits: input shape {:?} must be [batch, n_sensors = {}, d_embed*t = {f}]",
            x_csi.shape(),
            cfg.n_sensors
        )));
    }
    let b = x_csi.shape()[0];
    let flat = ops::reshape(tape, x_csi, &[b, cfg.n_sensors * f])?;
    ops::linear(tape, &flat, state.param("fc.weight")?, Some(state.param("fc.bias")?))
}

/// Full composition: embedding, local extraction, both fusions, pooling,
/// then the SSM and attention stages in the configured order (either may be
/// disabled), and the classifier. Attention matrices are returned when the
/// attention stage ran.
///
/// `[B, N, M, L] -> ([B, C], Option<[B, H, N, N]>)`
pub fn forward(
    tape: &mut Tape,
    x: &Tensor,
    cfg: &ModelConfig,
    state: &ModelState,
) -> Result<(Tensor, Option<Tensor>)> {
    let b = if x.rank() == 4 { x.shape()[0] } else { 0 };
    let emb = mse_embed(tape, x, cfg, state)?;
    let dw = lte_extract(tape, &emb, cfg, state)?;
    let (n, md, t) = (cfg.n_sensors, cfg.m_vars * cfg.d_embed, cfg.t_steps());
    let lanes = ops::reshape(tape, &dw, &[b * n, md, t])?;
    let fused = ccf_fuse(tape, &lanes, cfg, state)?;
    let fused = cvf_fuse(tape, &fused, cfg, state)?;
    let pooled = gta_pool(tape, &fused, cfg.m_vars)?; // [B*N, D, T]
    let f = cfg.token_len();

    let mut attention = None;
    let tokens = if cfg.gta_before_csi {
        let lanes = if cfg.enable_gta {
            mamba_block(tape, &pooled, cfg, state)?
        } else {
            pooled
        };
        let mut tokens = ops::reshape(tape, &lanes, &[b, n, f])?;
        if cfg.enable_csi {
            let (refined, attn) = csi_attend(tape, &tokens, cfg, state)?;
            tokens = refined;
            attention = Some(attn);
        }
        tokens
    } else {
        let mut tokens = ops::reshape(tape, &pooled, &[b, n, f])?;
        if cfg.enable_csi {
            let (refined, attn) = csi_attend(tape, &tokens, cfg, state)?;
            tokens = refined;
            attention = Some(attn);
        }
        if cfg.enable_gta {
            let lanes = ops::reshape(tape, &tokens, &[b * n, cfg.d_embed, t])?;
            let lanes = mamba_block(tape, &lanes, cfg, state)?;
            tokens = ops::reshape(tape, &lanes, &[b, n, f])?;
        }
        tokens
    };
    let logits = classify_logits(tape, &tokens, cfg, state)?;
    Ok((logits, attention))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(state: &ModelState, names: &[&str]) {
        for name in names {
            let t = state.param(name).unwrap();
            t.set_data(&vec![0.0; t.numel()]).unwrap();
        }
    }

    #[test]
    fn mse_identity_embedding_broadcasts_input() {
        let mut cfg = ModelConfig::new(2, 2, 4, 2);
        cfg.d_embed = 1;
        cfg.mse_kernel = 1;
        cfg.mse_stride = 1;
        cfg.n_heads = 1;
        cfg.validate().unwrap();
        let state = ModelState::init(&cfg).unwrap();
        let w = state.param("mse.weight").unwrap();
        w.set_data(&vec![1.0; w.numel()]).unwrap();
        zero_params(&state, &["mse.bias"]);
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect(), &[1, 2, 2, 4]).unwrap();
        let mut tape = Tape::inactive();
        let y = mse_embed(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1, 4]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn mse_zero_weights_zero_bias_give_zero() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        zero_params(&state, &["mse.weight", "mse.bias"]);
        let x = Tensor::from_vec(vec![1.5; 2 * 2 * 3 * 9], &[2, 2, 3, 9]).unwrap();
        let mut tape = Tape::inactive();
        let y = mse_embed(&mut tape, &x, &cfg, &state).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lte_identity_kernel_preserves_input() {
        let mut cfg = ModelConfig::tiny();
        cfg.lte_kernel = 1;
        cfg.validate().unwrap();
        let state = ModelState::init(&cfg).unwrap();
        let w = state.param("lte.weight").unwrap();
        w.set_data(&vec![1.0; w.numel()]).unwrap();
        zero_params(&state, &["lte.bias"]);
        let numel = 1 * 2 * 3 * 4 * 3;
        let x = Tensor::from_vec((0..numel).map(|v| v as f64).collect(), &[1, 2, 3, 4, 3]).unwrap();
        let mut tape = Tape::inactive();
        let y = lte_extract(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(y.shape(), &[1, 2, 12, 3]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn lte_shares_weights_across_sensors() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        // one batch element, both sensors fed the same embedded block
        let per_sensor: Vec<f64> = (0..3 * 4 * 3).map(|v| (v as f64).sin()).collect();
        let mut data = per_sensor.clone();
        data.extend_from_slice(&per_sensor);
        let x = Tensor::from_vec(data, &[1, 2, 3, 4, 3]).unwrap();
        let mut tape = Tape::inactive();
        let y = lte_extract(&mut tape, &x, &cfg, &state).unwrap();
        let yd = y.to_vec();
        let half = yd.len() / 2;
        assert_eq!(yd[..half], yd[half..]);
    }

    #[test]
    fn ccf_with_zero_fusion_weights_is_pure_residual() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        zero_params(&state, &["ccf.w1", "ccf.b1", "ccf.w2", "ccf.b2"]);
        let x = Tensor::from_vec((0..4 * 12 * 3).map(|v| (v as f64) * 0.1).collect(), &[4, 12, 3]).unwrap();
        let mut tape = Tape::inactive();
        let y = ccf_fuse(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn cvf_with_zero_fusion_weights_is_transposed_residual() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        zero_params(&state, &["cvf.w1", "cvf.b1", "cvf.w2", "cvf.b2"]);
        let (bn, m, d, t) = (2usize, cfg.m_vars, cfg.d_embed, cfg.t_steps());
        let x = Tensor::from_vec((0..bn * m * d * t).map(|v| v as f64).collect(), &[bn, m * d, t]).unwrap();
        let mut tape = Tape::inactive();
        let y = cvf_fuse(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(y.shape(), &[bn, d * m, t]);
        let xd = x.to_vec();
        let yd = y.to_vec();
        for b in 0..bn {
            for mi in 0..m {
                for di in 0..d {
                    for ti in 0..t {
                        let src = ((b * m + mi) * d + di) * t + ti;
                        let dst = ((b * d + di) * m + mi) * t + ti;
                        assert_eq!(yd[dst], xd[src]);
                    }
                }
            }
        }
    }

    #[test]
    fn gta_pool_averages_within_channel() {
        let mut tape = Tape::inactive();
        // one lane, one channel (d=1), m=2 variables holding 1 and 3
        let x = Tensor::from_vec(vec![1.0, 1.0, 3.0, 3.0], &[1, 2, 2]).unwrap();
        let y = gta_pool(&mut tape, &x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 2.0]);
    }

    #[test]
    fn gta_pool_is_exactly_permutation_invariant() {
        let mut tape = Tape::inactive();
        let vals = [0.1, -2.5, 3.75, 0.3, 1e-3];
        let x = Tensor::from_vec(vals.to_vec(), &[1, 5, 1]).unwrap();
        let mut rev = vals.to_vec();
        rev.reverse();
        let xp = Tensor::from_vec(rev, &[1, 5, 1]).unwrap();
        let a = gta_pool(&mut tape, &x, 5).unwrap();
        let b = gta_pool(&mut tape, &xp, 5).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn mamba_zero_output_projection_gives_zero() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        zero_params(&state, &["mamba.out_proj"]);
        let x = Tensor::from_vec((0..4 * 4 * 3).map(|v| (v as f64).cos()).collect(), &[4, 4, 3]).unwrap();
        let mut tape = Tape::inactive();
        let y = mamba_block(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(y.shape(), &[4, 4, 3]);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csi_attention_rows_are_probabilities() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let f = cfg.token_len();
        let x = Tensor::from_vec((0..2 * 2 * f).map(|v| (v as f64).sin()).collect(), &[2, 2, f]).unwrap();
        let mut tape = Tape::inactive();
        let (out, attn) = csi_attend(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(out.shape(), &[2, 2, f]);
        assert_eq!(attn.shape(), &[2, cfg.n_heads, 2, 2]);
        let ad = attn.to_vec();
        for row in ad.chunks(2) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csi_single_sensor_attends_to_itself() {
        let mut cfg = ModelConfig::tiny();
        cfg.n_sensors = 1;
        cfg.validate().unwrap();
        let state = ModelState::init(&cfg).unwrap();
        let f = cfg.token_len();
        let x = Tensor::from_vec((0..f).map(|v| v as f64 * 0.25).collect(), &[1, 1, f]).unwrap();
        let mut tape = Tape::inactive();
        let (_, attn) = csi_attend(&mut tape, &x, &cfg, &state).unwrap();
        assert!(attn.to_vec().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn classifier_zero_weights_emit_bias() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        zero_params(&state, &["fc.weight"]);
        state.param("fc.bias").unwrap().set_data(&[0.5, -1.0, 2.0]).unwrap();
        let f = cfg.token_len();
        let x = Tensor::from_vec(vec![3.0; 2 * 2 * f], &[2, 2, f]).unwrap();
        let mut tape = Tape::inactive();
        let y = classify_logits(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.to_vec(), vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_produces_contracted_shapes() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let x = Tensor::from_vec((0..2 * 2 * 3 * 9).map(|v| (v as f64 * 0.37).sin()).collect(), &[2, 2, 3, 9]).unwrap();
        let mut tape = Tape::inactive();
        let (logits, attn) = forward(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        let attn = attn.expect("attention enabled");
        assert_eq!(attn.shape(), &[2, 2, 2, 2]);
        assert!(logits.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let cfg = ModelConfig::tiny();
        let x = Tensor::from_vec((0..2 * 2 * 3 * 9).map(|v| (v as f64 * 0.11).cos()).collect(), &[2, 2, 3, 9]).unwrap();
        let run = || {
            let state = ModelState::init(&cfg).unwrap();
            let mut tape = Tape::inactive();
            forward(&mut tape, &x, &cfg, &state).unwrap().0.to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn forward_honors_ablation_flags() {
        let mut cfg = ModelConfig::tiny();
        cfg.enable_gta = false;
        cfg.enable_csi = false;
        let state = ModelState::init(&cfg).unwrap();
        let x = Tensor::from_vec((0..2 * 2 * 3 * 9).map(|v| (v as f64 * 0.2).sin()).collect(), &[2, 2, 3, 9]).unwrap();
        let mut tape = Tape::inactive();
        let (logits, attn) = forward(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        assert!(attn.is_none());
    }

    #[test]
    fn forward_supports_swapped_stage_order() {
        let mut cfg = ModelConfig::tiny();
        cfg.gta_before_csi = false;
        let state = ModelState::init(&cfg).unwrap();
        let x = Tensor::from_vec((0..2 * 2 * 3 * 9).map(|v| (v as f64 * 0.31).sin()).collect(), &[2, 2, 3, 9]).unwrap();
        let mut tape = Tape::inactive();
        let (logits, attn) = forward(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        assert!(attn.is_some());

        // and the order genuinely changes the function
        let cfg2 = ModelConfig::tiny();
        let state2 = ModelState::init(&cfg2).unwrap();
        let mut tape2 = Tape::inactive();
        let (logits2, _) = forward(&mut tape2, &x, &cfg2, &state2).unwrap();
        assert_ne!(logits.to_vec(), logits2.to_vec());
    }
}
