//! Sliding windows over recordings and per-channel normalization.

use super::recording::Recording;
use crate::error::{Error, Result};
use crate::model::NormStats;
use crate::tensor::Tensor;

/// A set of fixed-length windows ready for the model: values are stored
/// flat in `[window, sensor, variable, time]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBatch {
    pub n_sensors: usize,
    pub m_vars: usize,
    pub window_len: usize,
    pub windows: Vec<f64>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl SensorBatch {
    pub fn empty(n_sensors: usize, m_vars: usize, window_len: usize) -> SensorBatch {
        SensorBatch {
            n_sensors,
            m_vars,
            window_len,
            windows: Vec::new(),
            labels: Vec::new(),
            subjects: Vec::new(),
        }
    }

    /// Number of windows.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Values per window.
    pub fn window_numel(&self) -> usize {
        self.n_sensors * self.m_vars * self.window_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.len() != self.len() * self.window_numel() {
            return Err(Error::internal(format!(
                "batch holds {} values for {} windows of {} values",
                self.windows.len(),
                self.len(),
                self.window_numel()
            )));
        }
        if self.subjects.len() != self.len() {
            return Err(Error::internal("subject list length does not match window count"));
        }
        Ok(())
    }

    /// Errors when any label is outside `[0, n_classes)`.
    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::data(format!(
                "label {bad} is outside the configured {n_classes} classes"
            )));
        }
        Ok(())
    }

    /// New batch holding the given windows (indices may repeat or reorder).
    pub fn select(&self, indices: &[usize]) -> Result<SensorBatch> {
        let wn = self.window_numel();
        let mut out = SensorBatch::empty(self.n_sensors, self.m_vars, self.window_len);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::internal(format!("window index {i} out of range {}", self.len())));
            }
            out.windows.extend_from_slice(&self.windows[i * wn..(i + 1) * wn]);
            out.labels.push(self.labels[i]);
            out.subjects.push(self.subjects[i].clone());
        }
        Ok(out)
    }

    /// Appends every window of `other` (same geometry required).
    pub fn extend(&mut self, other: &SensorBatch) -> Result<()> {
        if (other.n_sensors, other.m_vars, other.window_len)
            != (self.n_sensors, self.m_vars, self.window_len)
        {
            return Err(Error::internal("cannot concatenate batches of different geometry"));
        }
        self.windows.extend_from_slice(&other.windows);
        self.labels.extend_from_slice(&other.labels);
        self.subjects.extend(other.subjects.iter().cloned());
        Ok(())
    }

    /// Model input tensor `[len(indices), N, M, L]` for the chosen windows.
    pub fn to_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let wn = self.window_numel();
        let mut data = Vec::with_capacity(indices.len() * wn);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::internal(format!("window index {i} out of range {}", self.len())));
            }
            data.extend_from_slice(&self.windows[i * wn..(i + 1) * wn]);
        }
        Tensor::from_vec(
            data,
            &[indices.len(), self.n_sensors, self.m_vars, self.window_len],
        )
    }

    /// Labels for the chosen windows.
    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Cuts a recording into fixed-length windows.
///
/// The window covers `L = floor(window_ms / 1000 * rate)` steps and advances
/// by `max(1, round(L * (1 - overlap)))`. Each window takes the majority of
/// its per-step labels, ties resolved toward the smallest label id. A
/// recording shorter than one window yields an empty batch.
pub fn slide_windows(
    rec: &Recording,
    n_sensors: usize,
    m_vars: usize,
    window_ms: f64,
    overlap_fraction: f64,
) -> Result<SensorBatch> {
    rec.validate()?;
    if n_sensors * m_vars != rec.n_channels {
        return Err(Error::config(format!(
            "recording has {} channels but the configuration expects {} sensors x {} variables",
            rec.n_channels, n_sensors, m_vars
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::config(format!(
            "overlap fraction must lie in [0, 1), got {overlap_fraction}"
        )));
    }
    let l = (window_ms / 1000.0 * rec.sample_rate_hz).floor() as usize;
    if l < 1 {
        return Err(Error::config(format!(
            "window of {window_ms} ms at {} Hz covers no samples",
            rec.sample_rate_hz
        )));
    }
    let step = ((l as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let mut batch = SensorBatch::empty(n_sensors, m_vars, l);
    if rec.len() < l {
        return Ok(batch);
    }
    let ch = rec.n_channels;
    let mut start = 0;
    while start + l <= rec.len() {
        // transpose [time, channel] rows into [sensor, variable, time]
        for c in 0..ch {
            for t in 0..l {
                batch.windows.push(rec.signals[(start + t) * ch + c]);
            }
        }
        batch.labels.push(majority_label(&rec.labels[start..start + l]));
        batch.subjects.push(rec.subject_id.clone());
        start += step;
    }
    batch.validate()?;
    Ok(batch)
}

/// Most frequent label; ties go to the smallest label id.
fn majority_label(labels: &[usize]) -> usize {
    let max = *labels.iter().max().expect("non-empty window");
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let best = *counts.iter().max().expect("non-empty counts");
    counts.iter().position(|&c| c == best).expect("a label attains the max")
}

/// Windows every recording and concatenates the results.
pub fn window_recordings(
    recs: &[Recording],
    n_sensors: usize,
    m_vars: usize,
    window_ms: f64,
    overlap_fraction: f64,
) -> Result<SensorBatch> {
    let mut iter = recs.iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::usage("no recordings to window"))?;
    let mut batch = slide_windows(first, n_sensors, m_vars, window_ms, overlap_fraction)?;
    for rec in iter {
        let next = slide_windows(rec, n_sensors, m_vars, window_ms, overlap_fraction)?;
        batch.extend(&next)?;
    }
    Ok(batch)
}

/// Computes per-(sensor, variable) mean and population standard deviation
/// (floored at 1e-8) from the training batch, normalizes the training batch
/// in place with them, and applies the same statistics to every other batch.
pub fn zscore_normalize(train: &mut SensorBatch, others: &mut [&mut SensorBatch]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::usage("cannot normalize from an empty training split"));
    }
    let channels = train.n_sensors * train.m_vars;
    let l = train.window_len;
    let per_channel = train.len() * l;
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for c in 0..channels {
        let mut sum = 0.0;
        for w in 0..train.len() {
            let base = (w * channels + c) * l;
            for t in 0..l {
                sum += train.windows[base + t];
            }
        }
        let mu = sum / per_channel as f64;
        let mut var = 0.0;
        for w in 0..train.len() {
            let base = (w * channels + c) * l;
            for t in 0..l {
                let d = train.windows[base + t] - mu;
                var += d * d;
            }
        }
        mean[c] = mu;
        std[c] = (var / per_channel as f64).sqrt().max(1e-8);
    }
    let stats = NormStats { mean, std };
    apply_norm_stats(train, &stats)?;
    for other in others {
        apply_norm_stats(other, &stats)?;
    }
    Ok(stats)
}

/// Applies previously captured statistics to a batch in place.
pub fn apply_norm_stats(batch: &mut SensorBatch, stats: &NormStats) -> Result<()> {
    let channels = batch.n_sensors * batch.m_vars;
    if stats.mean.len() != channels || stats.std.len() != channels {
        return Err(Error::config(format!(
            "normalization statistics cover {} channels but the batch has {channels}",
            stats.mean.len()
        )));
    }
    let l = batch.window_len;
    for w in 0..batch.len() {
        for c in 0..channels {
            let base = (w * channels + c) * l;
            for t in 0..l {
                batch.windows[base + t] = (batch.windows[base + t] - stats.mean[c]) / stats.std[c];
            }
        }
    }
    Ok(())
}
