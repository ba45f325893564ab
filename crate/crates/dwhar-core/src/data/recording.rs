//! Raw recordings: CSV parsing/writing and the dataset manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One continuous multi-sensor recording from a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    /// Row-major samples, one row per time step, `n_channels` columns in
    /// sensor-major order (channel index = sensor * m_vars + variable).
    pub signals: Vec<f64>,
    pub n_channels: usize,
    /// Per-time-step activity ids, same length as the signal row count.
    pub labels: Vec<usize>,
    pub channel_names: Vec<String>,
}

impl Recording {
    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(Error::data("recording has no channels"));
        }
        if self.signals.len() != self.len() * self.n_channels {
            return Err(Error::data(format!(
                "recording has {} samples for {} steps x {} channels",
                self.signals.len(),
                self.len(),
                self.n_channels
            )));
        }
        if self.channel_names.len() != self.n_channels {
            return Err(Error::data("channel name count does not match channel count"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::data(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// Sensor-major channel names `s0_v0, s0_v1, ..., s{n-1}_v{m-1}`.
pub fn channel_names(n_sensors: usize, m_vars: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(n_sensors * m_vars);
    for s in 0..n_sensors {
        for v in 0..m_vars {
            names.push(format!("s{s}_v{v}"));
        }
    }
    names
}

/// Reads one recording CSV (`timestamp,label,s0_v0,...`). Subject identity,
/// sample rate, and the sensor geometry come from the manifest, never from
/// the file itself.
pub fn parse_recording(
    path: &Path,
    subject_id: &str,
    sample_rate_hz: f64,
    n_sensors: usize,
    m_vars: usize,
) -> Result<Recording> {
    let expected_names = channel_names(n_sensors, m_vars);
    let n_channels = expected_names.len();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    {
        let headers = reader.headers().map_err(|e| csv_error(path, e))?;
        let got: Vec<&str> = headers.iter().collect();
        let mut expected: Vec<&str> = vec!["timestamp", "label"];
        expected.extend(expected_names.iter().map(|s| s.as_str()));
        if got != expected {
            return Err(Error::data_at(
                format!(
                    "{}: header mismatch: expected {:?}, found {:?}",
                    path.display(),
                    expected.join(","),
                    got.join(",")
                ),
                1,
            ));
        }
    }
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 + n_channels {
            return Err(Error::data_at(
                format!(
                    "{}: expected {} columns, found {}",
                    path.display(),
                    2 + n_channels,
                    record.len()
                ),
                line,
            ));
        }
        let label: usize = record[1]
            .parse()
            .map_err(|_| Error::data_at(format!("{}: label {:?} is not a non-negative integer", path.display(), &record[1]), line))?;
        labels.push(label);
        for i in 0..n_channels {
            let raw = &record[2 + i];
            let v: f64 = raw.parse().map_err(|_| {
                Error::data_at(
                    format!(
                        "{}: column {:?} value {:?} is not a number",
                        path.display(),
                        expected_names[i],
                        raw
                    ),
                    line,
                )
            })?;
            if !v.is_finite() {
                return Err(Error::data_at(
                    format!("{}: column {:?} holds a non-finite value", path.display(), expected_names[i]),
                    line,
                ));
            }
            signals.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::data(format!("{}: empty recording", path.display())));
    }
    let rec = Recording {
        subject_id: subject_id.to_string(),
        sample_rate_hz,
        signals,
        n_channels,
        labels,
        channel_names: expected_names,
    };
    rec.validate()?;
    Ok(rec)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::data_at(format!("{}: {e}", path.display()), p.line()),
        None => Error::data(format!("{}: {e}", path.display())),
    }
}

/// Writes the CSV form read back by `parse_recording`; timestamps are
/// reconstructed as step/rate.
pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    rec.validate()?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["timestamp".to_string(), "label".to_string()];
    header.extend(rec.channel_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for step in 0..rec.len() {
        let mut row = Vec::with_capacity(2 + rec.n_channels);
        row.push(format!("{}", step as f64 / rec.sample_rate_hz));
        row.push(rec.labels[step].to_string());
        for ch in 0..rec.n_channels {
            row.push(format!("{}", rec.signals[step * rec.n_channels + ch]));
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Dataset manifest: the sensor geometry, the class-name table, and one
/// entry per recording file. Stored as TOML.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub n_sensors: usize,
    pub m_vars: usize,
    pub class_names: Vec<String>,
    pub recordings: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    /// Path to the recording CSV, relative to the manifest file.
    pub path: String,
    pub sample_rate_hz: f64,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 || self.m_vars == 0 {
            return Err(Error::data("manifest must declare positive n_sensors and m_vars"));
        }
        if self.class_names.is_empty() {
            return Err(Error::data("manifest declares no classes"));
        }
        if self.recordings.is_empty() {
            return Err(Error::data("manifest lists no recordings"));
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::internal(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads every recording listed in a manifest, resolving paths relative to
/// the manifest location.
pub fn load_recordings(manifest: &Manifest, manifest_path: &Path) -> Result<Vec<Recording>> {
    let base: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest
        .recordings
        .iter()
        .map(|entry| {
            parse_recording(
                &base.join(&entry.path),
                &entry.subject_id,
                entry.sample_rate_hz,
                manifest.n_sensors,
                manifest.m_vars,
            )
        })
        .collect()
}
