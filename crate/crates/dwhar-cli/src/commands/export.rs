//! `dwhar export-attention`: run a trained model over a dataset slice and
//! write its batch-averaged cross-sensor attention weights as CSV.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dwhar_core::data::apply_norm_stats;
use dwhar_core::metrics::export_attention;
use dwhar_core::model::{forward, ModelConfig, ModelState};
use dwhar_core::{Error, Result, Tape};

use crate::artifacts::{write_json, RunInfo};
use crate::config::{resolve_out_dir, FileConfig, DEFAULT_OVERLAP, DEFAULT_WINDOW_MS};
use crate::data_io::{check_config_against_data, load_windows};

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Training output directory holding model.bin and its config.toml echo
    #[arg(long = "model-dir")]
    pub model_dir: PathBuf,
    /// Dataset manifest (default: the manifest recorded at training time)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (default: $DWHAR_OUT_ROOT/export-attention or ./dwhar-out/export-attention)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum number of windows averaged into the exported weights
    #[arg(long, default_value_t = 256)]
    pub limit: usize,
    /// Override the recorded sliding-window length in milliseconds
    #[arg(long = "window-ms")]
    pub window_ms: Option<f64>,
    /// Override the recorded fractional window overlap
    #[arg(long)]
    pub overlap: Option<f64>,
}

pub fn run(args: &ExportArgs) -> Result<i32> {
    let started = Instant::now();
    if args.limit == 0 {
        return Err(Error::usage("--limit must be at least 1"));
    }
    let echo_path = args.model_dir.join("config.toml");
    if !echo_path.is_file() {
        return Err(Error::usage(format!(
            "{} has no config.toml; point --model-dir at a train output directory",
            args.model_dir.display()
        )));
    }
    let file = FileConfig::load(Some(&echo_path))?;
    let cfg = file.model.apply(&ModelConfig::new(1, 1, 1, 1));
    cfg.validate()?;
    if !cfg.enable_csi {
        return Err(Error::usage(
            "this model was trained without the cross-sensor attention stage; \
             there are no attention weights to export",
        ));
    }

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

    let mut loaded = load_windows(&manifest, window_ms, overlap)?;
    check_config_against_data(&cfg, &loaded)?;
    let state = ModelState::load(&args.model_dir.join("model.bin"), &cfg)?;
    if let Some(stats) = &state.norm_stats {
        apply_norm_stats(&mut loaded.batch, stats)?;
    }

    let take = args.limit.min(loaded.batch.len());
    let indices: Vec<usize> = (0..take).collect();
    let x = loaded.batch.to_tensor(&indices)?;
    let mut tape = Tape::inactive();
    let (_, attention) = forward(&mut tape, &x, &cfg, &state)?;
    let attention = attention.ok_or_else(|| {
        Error::internal("attention stage enabled but no weights were produced")
    })?;

    let sensor_names: Vec<String> = (0..cfg.n_sensors).map(|s| format!("s{s}")).collect();
    let dir = resolve_out_dir(args.out.as_deref(), "export-attention");
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join("attention.csv");
    export_attention(&attention, &sensor_names, &csv_path)?;
    println!(
        "exported {} x {} attention weights over {} heads (averaged from {} windows) to {}",
        cfg.n_sensors,
        cfg.n_sensors,
        cfg.n_heads,
        take,
        csv_path.display()
    );

    write_json(
        &dir,
        "run_info.json",
        &RunInfo {
            command: "export-attention".into(),
            wall_seconds: started.elapsed().as_secs_f64(),
            manifest: Some(manifest),
            out_dir: dir.clone(),
            n_windows: Some(take),
            artifacts: vec!["attention.csv".into(), "run_info.json".into()],
        },
    )?;
    Ok(0)
}
