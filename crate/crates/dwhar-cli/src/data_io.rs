//! Shared manifest-to-windows loading for train/eval/export runs.

use std::path::Path;

use dwhar_core::data::{load_recordings, read_manifest, window_recordings, Manifest, SensorBatch};
use dwhar_core::model::ModelConfig;
use dwhar_core::{Error, Result};

pub struct LoadedData {
    pub manifest: Manifest,
    pub batch: SensorBatch,
}

pub fn load_windows(manifest_path: &Path, window_ms: f64, overlap: f64) -> Result<LoadedData> {
    let manifest = read_manifest(manifest_path)?;
    manifest.validate()?;
    let recordings = load_recordings(&manifest, manifest_path)?;
    let batch = window_recordings(&recordings, manifest.n_sensors, manifest.m_vars, window_ms, overlap)?;
    batch.check_labels(manifest.n_classes())?;
    Ok(LoadedData { manifest, batch })
}

/// The architecture must agree with what the data provides; a config file
/// that contradicts the manifest or the windowing is a configuration error,
/// not something to silently override.
pub fn check_config_against_data(cfg: &ModelConfig, data: &LoadedData) -> Result<()> {
    let m = &data.manifest;
    if cfg.n_sensors != m.n_sensors || cfg.m_vars != m.m_vars {
        return Err(Error::config(format!(
            "config says {} sensors x {} variables but the manifest provides {} x {}",
            cfg.n_sensors, cfg.m_vars, m.n_sensors, m.m_vars
        )));
    }
    if cfg.n_classes != m.n_classes() {
        return Err(Error::config(format!(
            "config says {} classes but the manifest names {}",
            cfg.n_classes,
            m.n_classes()
        )));
    }
    if cfg.window_len != data.batch.window_len {
        return Err(Error::config(format!(
            "config window_len {} does not match the {}-sample windows produced by the requested windowing",
            cfg.window_len, data.batch.window_len
        )));
    }
    Ok(())
}
