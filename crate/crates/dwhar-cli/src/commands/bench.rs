//! `dwhar bench`: parameter count, per-stage FLOP budget, and wall-clock
//! forward timings for a configuration.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dwhar_core::metrics::{closed_form_param_count, count_flops, count_params, FlopBreakdown};
use dwhar_core::model::{forward, ModelConfig, ModelState};
use dwhar_core::util::seed_stream;
use dwhar_core::{Error, Result, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{write_json, RunInfo};
use crate::config::{resolve_out_dir, FileConfig};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML config file; [model] overrides the built-in default network
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $DWHAR_OUT_ROOT/bench or ./dwhar-out/bench)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Windows per timed forward pass
    #[arg(long = "batch-size", default_value_t = 64)]
    pub batch_size: usize,
    /// Timed repetitions (after one warm-up pass)
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct BenchDoc {
    param_count: usize,
    flops_per_window: FlopBreakdown,
    batch_size: usize,
    reps: usize,
    forward_ms_mean: f64,
    forward_ms_std: f64,
    us_per_window: f64,
}

pub fn run(args: &BenchArgs) -> Result<i32> {
    let started = Instant::now();
    if args.batch_size == 0 {
        return Err(Error::usage("--batch-size must be at least 1"));
    }
    if args.reps == 0 {
        return Err(Error::usage("--reps must be at least 1"));
    }
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg = file.model.apply(&ModelConfig::opportunity_default());
    cfg.seed = args.seed;
    cfg.validate()?;

    let state = ModelState::init(&cfg)?;
    let counted = count_params(&state);
    let closed = closed_form_param_count(&cfg);
    println!("parameters: {counted} counted, {closed} closed-form");
    if counted != closed {
        println!("FAIL: parameter count mismatch");
        return Ok(1);
    }

    let flops = count_flops(&cfg);
    println!(
        "flops/window: {} total (mse {}, lte {}, ccf {}, cvf {}, pool {}, ssm {}, attention {}, classifier {})",
        flops.total, flops.mse, flops.lte, flops.ccf, flops.cvf, flops.gta_pool, flops.mamba,
        flops.csi, flops.fc
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(args.seed, "bench"));
    let n = args.batch_size * cfg.n_sensors * cfg.m_vars * cfg.window_len;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(
        data,
        &[args.batch_size, cfg.n_sensors, cfg.m_vars, cfg.window_len],
    )?;

    // warm-up, then timed passes without gradient recording
    let mut tape = Tape::inactive();
    forward(&mut tape, &x, &cfg, &state)?;
    let mut times_ms = Vec::with_capacity(args.reps);
    for _ in 0..args.reps {
        let t0 = Instant::now();
        let mut tape = Tape::inactive();
        let (logits, _) = forward(&mut tape, &x, &cfg, &state)?;
        let _ = logits.data();
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times_ms.iter().sum::<f64>() / args.reps as f64;
    let var = times_ms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / args.reps as f64;
    let std = var.sqrt();
    let us_per_window = mean * 1e3 / args.batch_size as f64;
    println!(
        "forward (batch {}): {:.2} ms +/- {:.2} over {} reps ({:.1} us/window)",
        args.batch_size, mean, std, args.reps, us_per_window
    );

    let dir = resolve_out_dir(args.out.as_deref(), "bench");
    std::fs::create_dir_all(&dir)?;
    write_json(
        &dir,
        "bench.json",
        &BenchDoc {
            param_count: counted,
            flops_per_window: flops,
            batch_size: args.batch_size,
            reps: args.reps,
            forward_ms_mean: mean,
            forward_ms_std: std,
            us_per_window,
        },
    )?;
    write_json(
        &dir,
        "run_info.json",
        &RunInfo {
            command: "bench".into(),
            wall_seconds: started.elapsed().as_secs_f64(),
            manifest: None,
            out_dir: dir.clone(),
            n_windows: None,
            artifacts: vec!["bench.json".into(), "run_info.json".into()],
        },
    )?;
    Ok(0)
}
