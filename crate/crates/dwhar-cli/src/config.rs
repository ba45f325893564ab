//! Layered run configuration: built-in defaults, then an optional TOML file
//! with dotted keys (`model.d_embed = 16`), then command-line flags. Every
//! run echoes the fully resolved configuration so it can be replayed.

use std::path::{Path, PathBuf};

use dwhar_core::data::SynthSpec;
use dwhar_core::model::ModelConfig;
use dwhar_core::training::TrainParams;
use dwhar_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// `[model]` section: every field optional, applied over a base config.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_sensors: Option<usize>,
    pub m_vars: Option<usize>,
    pub window_len: Option<usize>,
    pub n_classes: Option<usize>,
    pub d_embed: Option<usize>,
    pub mse_kernel: Option<usize>,
    pub mse_stride: Option<usize>,
    pub lte_kernel: Option<usize>,
    pub expand_ratio: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_state: Option<usize>,
    pub d_conv: Option<usize>,
    pub mamba_expand: Option<usize>,
    pub attn_scaled: Option<bool>,
    pub enable_gta: Option<bool>,
    pub enable_csi: Option<bool>,
    pub gta_before_csi: Option<bool>,
    pub seed: Option<u64>,
}

impl ModelSection {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        take!(
            n_sensors, m_vars, window_len, n_classes, d_embed, mse_kernel, mse_stride,
            lte_kernel, expand_ratio, n_heads, d_state, d_conv, mamba_expand, attn_scaled,
            enable_gta, enable_csi, gta_before_csi, seed
        );
        cfg
    }
}

/// `[train]` section.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
}

impl TrainSection {
    pub fn apply(&self, base: &TrainParams) -> TrainParams {
        TrainParams {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// `[data]` section: where the windows come from and how runs are split.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub window_ms: Option<f64>,
    pub overlap: Option<f64>,
    pub split: Option<String>,
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub test_frac: Option<f64>,
    pub reps: Option<usize>,
    pub workers: Option<usize>,
}

/// `[synth]` section.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_classes: Option<usize>,
    pub n_subjects: Option<usize>,
    pub windows_per_class: Option<usize>,
    pub n_sensors: Option<usize>,
    pub m_vars: Option<usize>,
    pub window_len: Option<usize>,
    pub sample_rate_hz: Option<f64>,
    pub noise_std: Option<f64>,
    pub amp_jitter: Option<f64>,
    pub seed: Option<u64>,
}

impl SynthSection {
    pub fn apply(&self, base: &SynthSpec) -> SynthSpec {
        SynthSpec {
            n_classes: self.n_classes.unwrap_or(base.n_classes),
            n_subjects: self.n_subjects.unwrap_or(base.n_subjects),
            windows_per_class: self.windows_per_class.unwrap_or(base.windows_per_class),
            n_sensors: self.n_sensors.unwrap_or(base.n_sensors),
            m_vars: self.m_vars.unwrap_or(base.m_vars),
            window_len: self.window_len.unwrap_or(base.window_len),
            sample_rate_hz: self.sample_rate_hz.unwrap_or(base.sample_rate_hz),
            noise_std: self.noise_std.unwrap_or(base.noise_std),
            amp_jitter: self.amp_jitter.unwrap_or(base.amp_jitter),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// Whole config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub synth: SynthSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

/// How windows are assigned to train/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Leave-one-subject-out cross-validation: one fold per subject.
    Loso,
    /// Seeded random window split into train/val/test fractions.
    Holdout,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<SplitMode> {
        match s {
            "loso" => Ok(SplitMode::Loso),
            "holdout" => Ok(SplitMode::Holdout),
            other => Err(Error::config(format!(
                "unknown split \"{other}\"; expected \"loso\" or \"holdout\""
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Loso => "loso",
            SplitMode::Holdout => "holdout",
        }
    }
}

/// Fully resolved data-handling settings for train/eval runs.
#[derive(Debug, Clone, Serialize)]
pub struct DataSettings {
    pub manifest: PathBuf,
    pub window_ms: f64,
    pub overlap: f64,
    pub split: SplitMode,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub reps: usize,
    pub workers: usize,
}

pub const DEFAULT_WINDOW_MS: f64 = 800.0;
pub const DEFAULT_OVERLAP: f64 = 0.0;
pub const DEFAULT_FRACS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Default output root: `--out` wins, then `DWHAR_OUT_ROOT`, then
/// `./dwhar-out`; the subcommand name becomes a subdirectory under a root.
pub fn resolve_out_dir(out: Option<&Path>, subcommand: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os("DWHAR_OUT_ROOT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("dwhar-out"));
            root.join(subcommand)
        }
    }
}

/// The resolved-config echo written into every run directory. Replaying
/// `dwhar train --config <echo>` reproduces the run bit for bit.
pub fn echo_config(
    dir: &Path,
    model: &ModelConfig,
    train: Option<&TrainParams>,
    data: Option<&DataSettings>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Echo<'a> {
        model: &'a ModelConfig,
        #[serde(skip_serializing_if = "Option::is_none")]
        train: Option<&'a TrainParams>,
        #[serde(skip_serializing_if = "Option::is_none")]
        data: Option<EchoData<'a>>,
    }
    #[derive(Serialize)]
    struct EchoData<'a> {
        manifest: String,
        window_ms: f64,
        overlap: f64,
        split: &'a str,
        train_frac: f64,
        val_frac: f64,
        test_frac: f64,
        reps: usize,
        workers: usize,
    }
    let echo = Echo {
        model,
        train,
        data: data.map(|d| EchoData {
            manifest: d.manifest.display().to_string(),
            window_ms: d.window_ms,
            overlap: d.overlap,
            split: d.split.name(),
            train_frac: d.train_frac,
            val_frac: d.val_frac,
            test_frac: d.test_frac,
            reps: d.reps,
            workers: d.workers,
        }),
    };
    let text = toml::to_string_pretty(&echo)
        .map_err(|e| Error::internal(format!("config echo serialization: {e}")))?;
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_override_the_base() {
        let file: FileConfig = toml::from_str(
            "model.d_embed = 16\nmodel.enable_gta = false\ntrain.epochs = 7\n",
        )
        .unwrap();
        let cfg = file.model.apply(&ModelConfig::tiny());
        assert_eq!(cfg.d_embed, 16);
        assert!(!cfg.enable_gta);
        assert_eq!(cfg.n_sensors, 2); // untouched base field
        let tp = file.train.apply(&TrainParams::default());
        assert_eq!(tp.epochs, 7);
        assert_eq!(tp.batch_size, 64);
    }

    #[test]
    fn section_form_equals_dotted_form() {
        let a: FileConfig = toml::from_str("[model]\nd_embed = 8\n").unwrap();
        let b: FileConfig = toml::from_str("model.d_embed = 8\n").unwrap();
        assert_eq!(a.model.d_embed, b.model.d_embed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: std::result::Result<FileConfig, _> = toml::from_str("model.d_embd = 8\n");
        assert!(r.is_err());
    }

    #[test]
    fn echoed_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny();
        let tp = TrainParams { epochs: 3, batch_size: 8, lr: 0.01, seed: 42 };
        echo_config(dir.path(), &cfg, Some(&tp), None).unwrap();
        let loaded = FileConfig::load(Some(&dir.path().join("config.toml"))).unwrap();
        assert_eq!(loaded.model.apply(&ModelConfig::opportunity_default()), cfg);
        assert_eq!(loaded.train.apply(&TrainParams::default()), tp);
    }

    #[test]
    fn split_mode_parses() {
        assert_eq!(SplitMode::parse("loso").unwrap(), SplitMode::Loso);
        assert_eq!(SplitMode::parse("holdout").unwrap(), SplitMode::Holdout);
        assert!(SplitMode::parse("k-fold").is_err());
    }
}
