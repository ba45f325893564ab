//! `dwhar eval`: reload a trained model and score it on a manifest dataset.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dwhar_core::data::apply_norm_stats;
use dwhar_core::metrics::{closed_form_param_count, count_flops};
use dwhar_core::model::{ModelConfig, ModelState};
use dwhar_core::training::evaluate_split;
use dwhar_core::{Error, Result};
use serde::Serialize;

use crate::artifacts::{write_json, RunInfo};
use crate::config::{resolve_out_dir, FileConfig, DEFAULT_OVERLAP, DEFAULT_WINDOW_MS};
use crate::data_io::{check_config_against_data, load_windows};
use dwhar_core::metrics::PerClass;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Training output directory holding model.bin and its config.toml echo
    #[arg(long = "model-dir")]
    pub model_dir: PathBuf,
    /// Dataset manifest to score (default: the manifest recorded at training time)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (default: $DWHAR_OUT_ROOT/eval or ./dwhar-out/eval)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation passes
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override the recorded sliding-window length in milliseconds
    #[arg(long = "window-ms")]
    pub window_ms: Option<f64>,
    /// Override the recorded fractional window overlap
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Serialize)]
struct EvalMetricsDoc {
    class_names: Vec<String>,
    n_windows: usize,
    accuracy: f64,
    macro_f1: f64,
    mean_loss: f64,
    per_class: Vec<PerClass>,
    confusion: Vec<Vec<usize>>,
    param_count: usize,
    flops_per_window: u64,
}

pub fn run(args: &EvalArgs) -> Result<i32> {
    let started = Instant::now();
    let echo_path = args.model_dir.join("config.toml");
    if !echo_path.is_file() {
        return Err(Error::usage(format!(
            "{} has no config.toml; point --model-dir at a train output directory",
            args.model_dir.display()
        )));
    }
    let file = FileConfig::load(Some(&echo_path))?;

    // the training echo records every model field, so applying it over any
    // base reconstructs the trained configuration exactly
    let cfg = file.model.apply(&ModelConfig::new(1, 1, 1, 1));
    cfg.validate()?;

    let manifest = args
        .data
        .clone()
        .or_else(|| file.data.manifest.clone())
        .ok_or_else(|| {
            Error::usage("no dataset given; pass --data <manifest> (none recorded at training time)")
        })?;
    let window_ms = args
        .window_ms
        .or(file.data.window_ms)
        .unwrap_or(DEFAULT_WINDOW_MS);
    let overlap = args.overlap.or(file.data.overlap).unwrap_or(DEFAULT_OVERLAP);
    let workers = args.workers.or(file.data.workers).unwrap_or(1);
    if workers == 0 {
        return Err(Error::usage("--workers must be at least 1"));
    }

    let mut loaded = load_windows(&manifest, window_ms, overlap)?;
    check_config_against_data(&cfg, &loaded)?;

    let state = ModelState::load(&args.model_dir.join("model.bin"), &cfg)?;
    if let Some(stats) = &state.norm_stats {
        apply_norm_stats(&mut loaded.batch, stats)?;
    }

    let metrics = evaluate_split(&cfg, &state, &loaded.batch, workers)?;
    println!(
        "evaluated {} windows: accuracy {:.2}%, macro-F1 {:.2}%, loss {:.4}",
        loaded.batch.len(),
        metrics.accuracy,
        metrics.macro_f1,
        metrics.mean_loss
    );

    let dir = resolve_out_dir(args.out.as_deref(), "eval");
    std::fs::create_dir_all(&dir)?;
    write_json(
        &dir,
        "metrics.json",
        &EvalMetricsDoc {
            class_names: loaded.manifest.class_names.clone(),
            n_windows: loaded.batch.len(),
            accuracy: metrics.accuracy,
            macro_f1: metrics.macro_f1,
            mean_loss: metrics.mean_loss,
            per_class: metrics.per_class,
            confusion: metrics.confusion,
            param_count: closed_form_param_count(&cfg),
            flops_per_window: count_flops(&cfg).total,
        },
    )?;
    write_json(
        &dir,
        "run_info.json",
        &RunInfo {
            command: "eval".into(),
            wall_seconds: started.elapsed().as_secs_f64(),
            manifest: Some(manifest),
            out_dir: dir.clone(),
            n_windows: Some(loaded.batch.len()),
            artifacts: vec!["metrics.json".into(), "run_info.json".into()],
        },
    )?;
    Ok(0)
}
