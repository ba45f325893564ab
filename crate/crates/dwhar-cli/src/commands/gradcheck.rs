//! `dwhar gradcheck`: compare every analytic parameter gradient against a
//! central finite difference through the whole network and loss.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dwhar_core::model::{forward, ModelConfig, ModelState};
use dwhar_core::tensor::gradcheck::{finite_diff_check, DEFAULT_STEP};
use dwhar_core::training::cross_entropy;
use dwhar_core::util::seed_stream;
use dwhar_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// TOML config file; [model] overrides the built-in small test network
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for parameter initialization and the probe batch
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum accepted relative error per tensor
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn run(args: &GradcheckArgs) -> Result<i32> {
    let started = Instant::now();
    let file = crate::config::FileConfig::load(args.config.as_deref())?;
    let mut cfg = file.model.apply(&ModelConfig::tiny());
    cfg.seed = args.seed;
    cfg.validate()?;

    let state = ModelState::init(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(args.seed, "gradcheck"));
    let b = 2usize;
    let n = b * cfg.n_sensors * cfg.m_vars * cfg.window_len;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(data, &[b, cfg.n_sensors, cfg.m_vars, cfg.window_len])?;
    let labels: Vec<usize> = (0..b).map(|i| i % cfg.n_classes).collect();

    let names: Vec<String> = state.params().map(|(name, _)| name.to_string()).collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0);
    let mut worst: (f64, String) = (0.0, String::new());
    let mut failures = 0usize;
    for name in &names {
        let param = state.param(name)?.clone();
        let err = finite_diff_check(
            |tape| {
                let (logits, _) = forward(tape, &x, &cfg, &state)?;
                cross_entropy(tape, &logits, &labels)
            },
            &param,
            DEFAULT_STEP,
        )?;
        let ok = err.is_finite() && err < args.tolerance;
        if !ok {
            failures += 1;
        }
        println!(
            "{} {:width$}  max rel err {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            name,
            err,
        );
        if err > worst.0 {
            worst = (err, name.clone());
        }
    }
    println!(
        "checked {} tensors in {:.2}s: worst {:.3e} ({}), tolerance {:.1e} -> {}",
        names.len(),
        started.elapsed().as_secs_f64(),
        worst.0,
        worst.1,
        args.tolerance,
        if failures == 0 { "PASS" } else { "FAIL" }
    );
    Ok(if failures == 0 { 0 } else { 1 })
}
