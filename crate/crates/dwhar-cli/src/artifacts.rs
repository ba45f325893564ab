//! Artifact documents written into run directories.
//!
//! Determinism contract: `metrics.json` and `train_log.jsonl` contain only
//! values that are bit-reproducible from the configuration and seed; all
//! timing and path information lives in `run_info.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use dwhar_core::metrics::PerClass;
use dwhar_core::training::EpochStats;
use dwhar_core::{Error, Result};
use serde::Serialize;

/// One training run (one fold, one repetition) summarized after evaluation
/// on its test windows.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub fold: String,
    pub rep: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_loss: f64,
    pub test_windows: usize,
    pub per_class: Vec<PerClass>,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub accuracy_mean: f64,
    /// Population standard deviation over runs.
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

pub fn aggregate(runs: &[RunSummary]) -> Aggregate {
    let n = runs.len() as f64;
    let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let std = |f: fn(&RunSummary) -> f64, m: f64| {
        (runs.iter().map(|r| (f(r) - m) * (f(r) - m)).sum::<f64>() / n).sqrt()
    };
    let acc = |r: &RunSummary| r.accuracy;
    let f1 = |r: &RunSummary| r.macro_f1;
    let (am, fm) = (mean(acc), mean(f1));
    Aggregate {
        runs: runs.len(),
        accuracy_mean: am,
        accuracy_std: std(acc, am),
        macro_f1_mean: fm,
        macro_f1_std: std(f1, fm),
    }
}

/// `metrics.json` for a training run.
#[derive(Debug, Serialize)]
pub struct TrainMetricsDoc {
    pub class_names: Vec<String>,
    pub param_count: usize,
    pub flops_per_window: u64,
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

/// One `train_log.jsonl` line.
#[derive(Debug, Serialize)]
pub struct EpochLine<'a> {
    pub fold: &'a str,
    pub rep: usize,
    #[serde(flatten)]
    pub stats: &'a EpochStats,
}

/// `run_info.json`: everything volatile (timings, paths, environment-ish
/// facts) that must stay out of the byte-reproducible artifacts.
#[derive(Debug, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_windows: Option<usize>,
    pub artifacts: Vec<String>,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::internal(format!("serializing {name}: {e}")))?;
    std::fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

/// Line-delimited JSON writer for the epoch log.
pub struct JsonlWriter {
    file: std::fs::File,
}

impl JsonlWriter {
    pub fn create(dir: &Path, name: &str) -> Result<JsonlWriter> {
        Ok(JsonlWriter { file: std::fs::File::create(dir.join(name))? })
    }

    pub fn line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string(value)
            .map_err(|e| Error::internal(format!("serializing log line: {e}")))?;
        writeln!(self.file, "{text}")?;
        Ok(())
    }
}
