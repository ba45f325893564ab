//! Classification metrics, parameter/FLOP accounting, and attention export.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::tensor::Tensor;

/// Precision/recall/F1 for one class, in percent.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PerClass {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation summary of one split.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Percent of windows classified correctly.
    pub accuracy: f64,
    /// Unweighted mean F1 over all configured classes, percent.
    pub macro_f1: f64,
    /// Mean cross-entropy over the split's windows.
    pub mean_loss: f64,
    pub per_class: Vec<PerClass>,
    /// `confusion[true_class][predicted_class]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub param_count: usize,
    pub flops_per_window: u64,
}

fn check_labels(kind: &str, values: &[usize], n_classes: usize) -> Result<()> {
    if let Some(&bad) = values.iter().find(|&&v| v >= n_classes) {
        return Err(Error::data(format!(
            "{kind} value {bad} is outside the configured {n_classes} classes"
        )));
    }
    Ok(())
}

/// `confusion[t][p]` = number of windows of true class `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::usage(format!(
            "label/prediction lengths differ: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    check_labels("label", y_true, n_classes)?;
    check_labels("prediction", y_pred, n_classes)?;
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Percent of diagonal mass: `trace(confusion) / total * 100`.
pub fn accuracy_from_confusion(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
    if total == 0 {
        return 0.0;
    }
    let trace: usize = confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
    trace as f64 / total as f64 * 100.0
}

/// Percent accuracy directly from label vectors.
pub fn accuracy(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    Ok(accuracy_from_confusion(&confusion_matrix(y_true, y_pred, n_classes)?))
}

fn per_class_from_confusion(confusion: &[Vec<usize>]) -> Vec<PerClass> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let row: usize = confusion[k].iter().sum(); // true k
            let col: usize = confusion.iter().map(|r| r[k]).sum(); // predicted k
            let precision = if col == 0 { 0.0 } else { tp as f64 / col as f64 };
            let recall = if row == 0 { 0.0 } else { tp as f64 / row as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            PerClass {
                precision: precision * 100.0,
                recall: recall * 100.0,
                f1: f1 * 100.0,
            }
        })
        .collect()
}

/// Unweighted mean F1 over all `n_classes` configured classes, in percent.
/// Classes absent from both vectors contribute an F1 of zero, keeping the
/// denominator fixed at the class count.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    let confusion = confusion_matrix(y_true, y_pred, n_classes)?;
    let per_class = per_class_from_confusion(&confusion);
    Ok(per_class.iter().map(|c| c.f1).sum::<f64>() / n_classes as f64)
}

/// Accuracy, macro-F1, per-class metrics, and the confusion matrix in one
/// pass.
pub fn classification_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
) -> Result<(f64, f64, Vec<PerClass>, Vec<Vec<usize>>)> {
    let confusion = confusion_matrix(y_true, y_pred, n_classes)?;
    let per_class = per_class_from_confusion(&confusion);
    let acc = accuracy_from_confusion(&confusion);
    let mf1 = per_class.iter().map(|c| c.f1).sum::<f64>() / n_classes as f64;
    Ok((acc, mf1, per_class, confusion))
}

/// Total learned scalars in the state. Matches `closed_form_param_count`
/// for any freshly initialized configuration.
pub fn count_params(state: &ModelState) -> usize {
    state.n_params()
}

/// Closed-form parameter count, stage by stage:
///
/// - embedding: `N*M*D*P` weights + `N*M*D` biases
/// - local extraction: `M*D*K` weights + `M*D` biases
/// - channel fusion: `2*M*D` norm + `e*D*D*M + e*D*M` expand + `M*D*e*D + M*D` restore
/// - variable fusion: `2*D*M` norm + `e*M*M*D + e*M*D` expand + `D*M*e*M + D*M` restore
/// - SSM block (when enabled): two input projections `2*Di*D`, local conv
///   `Di*d_conv + Di`, step projection `Di*Di + Di`, input/output state
///   projections `2*ds*Di`, state spectrum `Di*ds`, skip `Di`, output
///   projection `D*Di`
/// - attention (when enabled): `4*F*F` with `F = D*T`
/// - classifier: `C*N*F + C`
pub fn closed_form_param_count(cfg: &ModelConfig) -> usize {
    let (n, m, d, c) = (cfg.n_sensors, cfg.m_vars, cfg.d_embed, cfg.n_classes);
    let (p, k, e) = (cfg.mse_kernel, cfg.lte_kernel, cfg.expand_ratio);
    let (di, ds, f) = (cfg.d_inner(), cfg.d_state, cfg.token_len());
    let mut total = n * m * d * p + n * m * d; // embedding
    total += m * d * k + m * d; // local extraction
    total += 2 * m * d + (e * d * d * m + e * d * m) + (m * d * e * d + m * d); // channel fusion
    total += 2 * d * m + (e * m * m * d + e * m * d) + (d * m * e * m + d * m); // variable fusion
    if cfg.enable_gta {
        total += 2 * di * d + (di * cfg.d_conv + di) + (di * di + di) + 2 * ds * di + di * ds + di + d * di;
    }
    if cfg.enable_csi {
        total += 4 * f * f;
    }
    total += c * n * f + c; // classifier
    total
}

/// Analytic FLOPs for one stage's pieces. Conventions (documented here and
/// used consistently everywhere): a multiply-accumulate costs 2 FLOPs, a
/// bias or residual add costs 1 per element, an activation costs 1 per
/// element, and the per-channel normalization costs 7 per element plus 4
/// per channel (mean, variance, and the normalize/scale/shift pass).
#[derive(Debug, Clone, Serialize)]
pub struct FlopBreakdown {
    pub mse: u64,
    pub lte: u64,
    pub ccf: u64,
    pub cvf: u64,
    pub gta_pool: u64,
    pub mamba: u64,
    pub csi: u64,
    pub fc: u64,
    pub total: u64,
}

fn conv_flops(c_out: u64, t_out: u64, c_in_per_group: u64, k: u64) -> u64 {
    2 * c_out * t_out * c_in_per_group * k + c_out * t_out
}

fn linear_flops(rows: u64, d_in: u64, d_out: u64, bias: bool) -> u64 {
    2 * rows * d_in * d_out + if bias { rows * d_out } else { 0 }
}

fn norm_flops(channels: u64, t: u64) -> u64 {
    7 * channels * t + 4 * channels
}

/// Per-window FLOPs of every stage under the conventions documented on
/// [`FlopBreakdown`]. The sequential scan contributes
/// `T * D_inner * (8*d_state + 2)` per sensor (state decay, update, and
/// readout per state element, plus the skip path).
pub fn count_flops(cfg: &ModelConfig) -> FlopBreakdown {
    let n = cfg.n_sensors as u64;
    let m = cfg.m_vars as u64;
    let d = cfg.d_embed as u64;
    let c = cfg.n_classes as u64;
    let t = cfg.t_steps() as u64;
    let p = cfg.mse_kernel as u64;
    let k = cfg.lte_kernel as u64;
    let e = cfg.expand_ratio as u64;
    let di = cfg.d_inner() as u64;
    let ds = cfg.d_state as u64;
    let h = cfg.n_heads as u64;
    let f = cfg.token_len() as u64;

    let mse = conv_flops(n * m * d, t, 1, p);
    let lte = n * conv_flops(m * d, t, 1, k);
    let ccf = n * (norm_flops(m * d, t)
        + conv_flops(m * e * d, t, d, 1)
        + m * e * d * t // activation
        + conv_flops(m * d, t, e * d, 1)
        + m * d * t); // residual
    let cvf = n * (norm_flops(d * m, t)
        + conv_flops(d * e * m, t, m, 1)
        + d * e * m * t
        + conv_flops(d * m, t, e * m, 1)
        + d * m * t);
    let gta_pool = n * d * t * m; // mean over variables
    let mamba = if cfg.enable_gta {
        n * (linear_flops(t, d, di, false) * 2 // input + gate projections
            + conv_flops(di, t, 1, cfg.d_conv as u64)
            + 2 * di * t // SiLU on the conv branch and on the gate
            + linear_flops(t, di, di, true) + di * t // step projection + softplus
            + linear_flops(t, di, ds, false) * 2 // state input/output projections
            + t * di * (8 * ds + 2) // sequential scan + skip
            + di * t // gating multiply
            + linear_flops(t, di, d, false))
    } else {
        0
    };
    let csi = if cfg.enable_csi {
        4 * linear_flops(n, f, f, false) // Q, K, V, W projections
            + 2 * n * n * f // logits
            + 3 * h * n * n // softmax
            + 2 * n * n * f // attention x values
            + n * f // residual
    } else {
        0
    };
    let fc = linear_flops(1, n * f, c, true);
    let total = mse + lte + ccf + cvf + gta_pool + mamba + csi + fc;
    FlopBreakdown { mse, lte, ccf, cvf, gta_pool, mamba, csi, fc, total }
}

/// Writes per-head and head-averaged sensor-attention matrices (averaged
/// over the batch) as CSV: columns `head,sensor,<sensor names...>`, one row
/// per (head, query sensor), then rows for the head average under `mean`.
pub fn export_attention(attn: &Tensor, sensor_names: &[String], path: &Path) -> Result<()> {
    if attn.rank() != 4 || attn.shape()[2] != attn.shape()[3] {
        return Err(Error::config(format!(
            "attention tensor must be [batch, heads, sensors, sensors], got {:?}",
            attn.shape()
        )));
    }
    let (b, h, n) = (attn.shape()[0], attn.shape()[1], attn.shape()[2]);
    if sensor_names.len() != n {
        return Err(Error::config(format!(
            "{} sensor names for {n} sensors",
            sensor_names.len()
        )));
    }
    if b == 0 {
        return Err(Error::usage("cannot export attention from an empty batch"));
    }
    let data = attn.data();
    // batch-averaged [h][i][j]
    let mut avg = vec![0.0; h * n * n];
    for bi in 0..b {
        for x in 0..h * n * n {
            avg[x] += data[bi * h * n * n + x];
        }
    }
    for v in avg.iter_mut() {
        *v /= b as f64;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["head".to_string(), "sensor".to_string()];
    header.extend(sensor_names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::data(e.to_string()))?;
    let mut write_matrix = |tag: &str, mat: &[f64]| -> Result<()> {
        for i in 0..n {
            let mut row = vec![tag.to_string(), sensor_names[i].clone()];
            for j in 0..n {
                row.push(format!("{}", mat[i * n + j]));
            }
            w.write_record(&row).map_err(|e| Error::data(e.to_string()))?;
        }
        Ok(())
    };
    for head in 0..h {
        let tag = head.to_string();
        write_matrix(&tag, &avg[head * n * n..(head + 1) * n * n])?;
    }
    let mut mean = vec![0.0; n * n];
    for head in 0..h {
        for x in 0..n * n {
            mean[x] += avg[head * n * n + x];
        }
    }
    for v in mean.iter_mut() {
        *v /= h as f64;
    }
    write_matrix("mean", &mean)?;
    w.flush()?;
    Ok(())
}
