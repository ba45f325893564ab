//! `dwhar train`: train on a manifest dataset, optionally over several folds
//! and repetitions, writing reproducible artifacts plus a timing sidecar.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dwhar_core::data::{holdout_split, loso_split, zscore_normalize, SensorBatch};
use dwhar_core::metrics::{closed_form_param_count, count_flops};
use dwhar_core::model::{ModelConfig, ModelState, NormStats};
use dwhar_core::training::{train_epochs, TrainParams};
use dwhar_core::{Error, Result};

use crate::artifacts::{aggregate, write_json, JsonlWriter, RunInfo, RunSummary, TrainMetricsDoc};
use crate::config::{
    echo_config, resolve_out_dir, DataSettings, FileConfig, SplitMode, DEFAULT_FRACS,
    DEFAULT_OVERLAP, DEFAULT_WINDOW_MS,
};
use crate::data_io::{check_config_against_data, load_windows, LoadedData};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (TOML); may instead come from [data].manifest in --config
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML config file layered between built-in defaults and flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $DWHAR_OUT_ROOT/train or ./dwhar-out/train)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed; repetition r runs with seed base + r
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Evaluation protocol: leave-one-subject-out or a seeded holdout
    #[arg(long, value_enum)]
    pub split: Option<SplitMode>,
    /// Independent repetitions per fold (seeds base..base+reps)
    #[arg(long)]
    pub reps: Option<usize>,
    /// Sliding-window length in milliseconds
    #[arg(long = "window-ms")]
    pub window_ms: Option<f64>,
    /// Fractional overlap between consecutive windows, in [0, 1)
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Worker threads for evaluation passes
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "d-embed")]
    pub d_embed: Option<usize>,
    /// Disable the global temporal aggregation stage
    #[arg(long = "no-gta")]
    pub no_gta: bool,
    /// Disable the cross-sensor interaction stage
    #[arg(long = "no-csi")]
    pub no_csi: bool,
    /// Run attention before the temporal stage instead of after it
    #[arg(long = "gta-after-csi")]
    pub gta_after_csi: bool,
}

/// One train/val/test unit; LOSO produces one per held-out subject.
struct Fold {
    name: String,
    train: SensorBatch,
    val: Option<SensorBatch>,
    test: SensorBatch,
    norm: NormStats,
}

struct Resolved {
    cfg: ModelConfig,
    params: TrainParams,
    data: DataSettings,
}

/// Layers defaults, the config file, and flags into the final model,
/// training, and data settings, loading the windowed dataset along the way.
fn resolve(args: &TrainArgs) -> Result<(Resolved, LoadedData, PathBuf)> {
    let file = FileConfig::load(args.config.as_deref())?;

    let manifest = args
        .data
        .clone()
        .or_else(|| file.data.manifest.clone())
        .ok_or_else(|| {
            Error::usage("no dataset given; pass --data <manifest> or set [data].manifest")
        })?;
    let window_ms = args
        .window_ms
        .or(file.data.window_ms)
        .unwrap_or(DEFAULT_WINDOW_MS);
    let overlap = args.overlap.or(file.data.overlap).unwrap_or(DEFAULT_OVERLAP);
    let split = match args.split {
        Some(s) => s,
        None => match &file.data.split {
            Some(s) => SplitMode::parse(s)?,
            None => SplitMode::Holdout,
        },
    };
    let train_frac = file.data.train_frac.unwrap_or(DEFAULT_FRACS.0);
    let val_frac = file.data.val_frac.unwrap_or(DEFAULT_FRACS.1);
    let test_frac = file.data.test_frac.unwrap_or(DEFAULT_FRACS.2);
    let reps = args.reps.or(file.data.reps).unwrap_or(1);
    let workers = args.workers.or(file.data.workers).unwrap_or(1);
    if reps == 0 {
        return Err(Error::usage("--reps must be at least 1"));
    }
    if workers == 0 {
        return Err(Error::usage("--workers must be at least 1"));
    }
    let data = DataSettings {
        manifest,
        window_ms,
        overlap,
        split,
        train_frac,
        val_frac,
        test_frac,
        reps,
        workers,
    };

    let loaded = load_windows(&data.manifest, window_ms, overlap)?;
    let base = ModelConfig::new(
        loaded.batch.n_sensors,
        loaded.batch.m_vars,
        loaded.batch.window_len,
        loaded.manifest.n_classes(),
    );
    let mut cfg = file.model.apply(&base);
    if let Some(d) = args.d_embed {
        cfg.d_embed = d;
    }
    if args.no_gta {
        cfg.enable_gta = false;
    }
    if args.no_csi {
        cfg.enable_csi = false;
    }
    if args.gta_after_csi {
        cfg.gta_before_csi = false;
    }
    let base_seed = args
        .seed
        .or(file.train.seed)
        .or(file.model.seed)
        .unwrap_or(0);
    cfg.seed = base_seed;
    check_config_against_data(&cfg, &loaded)?;
    cfg.validate()?;

    let mut params = file.train.apply(&TrainParams::default());
    if let Some(e) = args.epochs {
        params.epochs = e;
    }
    if let Some(b) = args.batch_size {
        params.batch_size = b;
    }
    if let Some(lr) = args.lr {
        params.lr = lr;
    }
    params.seed = base_seed;
    params.validate()?;

    let dir = resolve_out_dir(args.out.as_deref(), "train");
    Ok((Resolved { cfg, params, data }, loaded, dir))
}

/// Splits the windowed dataset into folds and z-normalizes each fold from its
/// own training statistics. The split is seeded by the base seed only, so
/// repetitions see identical data and differ only in initialization and
/// shuffling.
fn build_folds(batch: &SensorBatch, r: &Resolved) -> Result<Vec<Fold>> {
    let seed = r.params.seed;
    let mut folds = Vec::new();
    match r.data.split {
        SplitMode::Holdout => {
            let fracs = (r.data.train_frac, r.data.val_frac, r.data.test_frac);
            let (mut train, mut val, mut test) = holdout_split(batch, fracs, seed)?;
            let norm = normalize_fold(&mut train, &mut val, &mut test)?;
            let val = (!val.is_empty()).then_some(val);
            folds.push(Fold { name: "holdout".into(), train, val, test, norm });
        }
        SplitMode::Loso => {
            for unit in loso_split(batch)? {
                // carve a validation slice out of the fold's training subjects;
                // the remainder (third slice) trains, so no window is dropped
                let (mut val, _, mut train) = holdout_split(&unit.train, (0.1, 0.0, 0.9), seed)?;
                let mut test = unit.test;
                let norm = normalize_fold(&mut train, &mut val, &mut test)?;
                let val = (!val.is_empty()).then_some(val);
                folds.push(Fold {
                    name: format!("loso-{}", unit.held_out_subject),
                    train,
                    val,
                    test,
                    norm,
                });
            }
        }
    }
    Ok(folds)
}

fn normalize_fold(
    train: &mut SensorBatch,
    val: &mut SensorBatch,
    test: &mut SensorBatch,
) -> Result<NormStats> {
    if val.is_empty() {
        zscore_normalize(train, &mut [test])
    } else {
        zscore_normalize(train, &mut [val, test])
    }
}

pub fn run(args: &TrainArgs) -> Result<i32> {
    let started = Instant::now();
    let (resolved, loaded, dir) = resolve(args)?;
    let n_windows = loaded.batch.len();
    std::fs::create_dir_all(&dir)?;
    echo_config(&dir, &resolved.cfg, Some(&resolved.params), Some(&resolved.data))?;

    let folds = build_folds(&loaded.batch, &resolved)?;
    let base_seed = resolved.params.seed;
    let mut log = JsonlWriter::create(&dir, "train_log.jsonl")?;
    let mut runs: Vec<RunSummary> = Vec::new();
    let mut saved_model = false;

    for (fold_idx, fold) in folds.iter().enumerate() {
        for rep in 0..resolved.data.reps {
            let seed = base_seed + rep as u64;
            let mut cfg = resolved.cfg.clone();
            cfg.seed = seed;
            let mut params = resolved.params.clone();
            params.seed = seed;

            let mut state = ModelState::init(&cfg)?;
            state.norm_stats = Some(fold.norm.clone());
            let report = train_epochs(&cfg, &state, &fold.train, fold.val.as_ref(), &params)?;
            for stats in &report.epochs {
                log.line(&crate::artifacts::EpochLine {
                    fold: &fold.name,
                    rep,
                    stats,
                })?;
            }

            let metrics =
                dwhar_core::training::evaluate_split(&cfg, &state, &fold.test, resolved.data.workers)?;
            println!(
                "fold {} rep {} (seed {}): test accuracy {:.2}%, macro-F1 {:.2}%, loss {:.4} (best epoch {})",
                fold.name, rep, seed, metrics.accuracy, metrics.macro_f1, metrics.mean_loss, report.best_epoch
            );
            runs.push(RunSummary {
                fold: fold.name.clone(),
                rep,
                seed,
                best_epoch: report.best_epoch,
                accuracy: metrics.accuracy,
                macro_f1: metrics.macro_f1,
                mean_loss: metrics.mean_loss,
                test_windows: fold.test.len(),
                per_class: metrics.per_class,
                confusion: metrics.confusion,
            });

            // the saved model is the rep whose seed equals the echoed config's,
            // so `eval` can reload it against config.toml digest-for-digest
            if fold_idx == 0 && rep == 0 && !saved_model {
                state.save(&dir.join("model.bin"), &cfg)?;
                saved_model = true;
            }
        }
    }

    let agg = aggregate(&runs);
    println!(
        "aggregate over {} run(s): accuracy {:.2}% +/- {:.2}, macro-F1 {:.2}% +/- {:.2}",
        runs.len(),
        agg.accuracy_mean,
        agg.accuracy_std,
        agg.macro_f1_mean,
        agg.macro_f1_std
    );

    let doc = TrainMetricsDoc {
        class_names: loaded.manifest.class_names.clone(),
        param_count: closed_form_param_count(&resolved.cfg),
        flops_per_window: count_flops(&resolved.cfg).total,
        runs,
        aggregate: agg,
    };
    write_json(&dir, "metrics.json", &doc)?;

    write_json(
        &dir,
        "run_info.json",
        &RunInfo {
            command: "train".into(),
            wall_seconds: started.elapsed().as_secs_f64(),
            manifest: Some(resolved.data.manifest.clone()),
            out_dir: dir.clone(),
            n_windows: Some(n_windows),
            artifacts: vec![
                "config.toml".into(),
                "train_log.jsonl".into(),
                "metrics.json".into(),
                "model.bin".into(),
                "run_info.json".into(),
            ],
        },
    )?;
    Ok(0)
}
