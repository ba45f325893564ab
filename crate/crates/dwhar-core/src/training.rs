//! Loss, optimizer, epoch loop, and split evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SensorBatch;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{forward, ModelConfig, ModelState};
use crate::tensor::{Tape, Tensor};
use crate::util::seed_stream;

/// Windows per forward pass during evaluation. Fixed so that results are
/// identical no matter how the chunks are distributed over workers.
const EVAL_CHUNK: usize = 64;

/// Mean of `-log softmax(logits)[label]` over the batch, log-sum-exp
/// stabilized. Differentiable with respect to `logits`.
pub fn cross_entropy(tape: &mut Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::config(format!(
            "cross_entropy expects [batch, classes] logits, got {:?}",
            logits.shape()
        )));
    }
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::config(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::usage("cross_entropy on an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::data(format!(
            "label {bad} is outside the {c} logit classes"
        )));
    }
    let data = logits.data();
    let mut probs = vec![0.0; b * c];
    let mut loss = 0.0;
    for row in 0..b {
        let x = &data[row * c..(row + 1) * c];
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &v) in x.iter().enumerate() {
            let e = (v - m).exp();
            probs[row * c + j] = e;
            denom += e;
        }
        for p in &mut probs[row * c..(row + 1) * c] {
            *p /= denom;
        }
        let lse = m + denom.ln();
        loss += lse - x[labels[row]];
    }
    drop(data);
    loss /= b as f64;

    let out = Tensor::op_output(vec![loss], &[], &[logits]);
    if tape.is_active() && out.needs_grad() {
        let logits_bp = logits.clone();
        let out_bp = out.clone();
        let labels_bp = labels.to_vec();
        tape.record(true, move || {
            let g = out_bp.grad().map(|g| g[0]).unwrap_or(0.0);
            if g == 0.0 {
                return;
            }
            let scale = g / b as f64;
            let mut dl = vec![0.0; b * c];
            for row in 0..b {
                for j in 0..c {
                    let onehot = if j == labels_bp[row] { 1.0 } else { 0.0 };
                    dl[row * c + j] = (probs[row * c + j] - onehot) * scale;
                }
            }
            logits_bp.add_to_grad(&dl);
        });
    }
    Ok(out)
}

/// Bias-corrected Adam with the usual defaults (β1=0.9, β2=0.999, ε=1e-8).
/// Buffers are kept in the same order as the model's parameter list.
#[derive(Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(state: &ModelState, lr: f64) -> AdamState {
        let m = state.params().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter. Every parameter must carry a
    /// gradient from the preceding backward pass.
    pub fn step(&mut self, state: &ModelState) -> Result<()> {
        if self.m.len() != state.n_tensors() {
            return Err(Error::internal(format!(
                "optimizer tracks {} tensors but the model has {}",
                self.m.len(),
                state.n_tensors()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, tensor)) in state.params().enumerate() {
            let grad = tensor.grad().ok_or_else(|| {
                Error::usage(format!(
                    "adam step without a gradient for \"{name}\"; run backward first"
                ))
            })?;
            let mut values = tensor.to_vec();
            for (j, g) in grad.iter().enumerate() {
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i][j] / bc1;
                let v_hat = self.v[i][j] / bc2;
                values[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.set_data(&values)?;
        }
        Ok(())
    }
}

/// Knobs for one training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { epochs: 80, batch_size: 64, lr: 0.001, seed: 0 }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }
}

/// One epoch's running metrics. Train numbers come from the minibatch
/// forward passes as the parameters evolve; validation numbers come from a
/// full pass with frozen parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_macro_f1: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters the model ends with (best validation
    /// macro-F1 when a validation split is given, otherwise the last).
    pub best_epoch: usize,
    pub wall_seconds: f64,
    pub seed: u64,
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let data = logits.data();
    (0..b)
        .map(|row| {
            let x = &data[row * c..(row + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if x[j] > x[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn check_batch_dims(cfg: &ModelConfig, batch: &SensorBatch, what: &str) -> Result<()> {
    if batch.n_sensors != cfg.n_sensors
        || batch.m_vars != cfg.m_vars
        || batch.window_len != cfg.window_len
    {
        return Err(Error::config(format!(
            "{what} windows are [{}, {}, {}] per window but the model expects [{}, {}, {}]",
            batch.n_sensors,
            batch.m_vars,
            batch.window_len,
            cfg.n_sensors,
            cfg.m_vars,
            cfg.window_len
        )));
    }
    Ok(())
}

/// Shuffled-minibatch training with per-epoch metrics and best-epoch
/// checkpointing. Deterministic for a given seed: the shuffle stream, the
/// minibatch order, and every update depend only on the inputs.
pub fn train_epochs(
    cfg: &ModelConfig,
    state: &ModelState,
    train: &SensorBatch,
    val: Option<&SensorBatch>,
    params: &TrainParams,
) -> Result<TrainReport> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::usage("cannot train on an empty window set"));
    }
    train.check_labels(cfg.n_classes)?;
    check_batch_dims(cfg, train, "training")?;
    if let Some(v) = val {
        v.check_labels(cfg.n_classes)?;
        check_batch_dims(cfg, v, "validation")?;
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(params.seed, "shuffle"));
    let mut adam = AdamState::new(state, params.lr);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(params.epochs);
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;

    for epoch in 1..=params.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut epoch_preds = Vec::with_capacity(train.len());
        let mut epoch_labels = Vec::with_capacity(train.len());
        for chunk in indices.chunks(params.batch_size) {
            let x = train.to_tensor(chunk)?;
            let labels = train.gather_labels(chunk);
            let mut tape = Tape::new();
            let (logits, _) = forward(&mut tape, &x, cfg, state)?;
            let loss = cross_entropy(&mut tape, &logits, &labels)?;
            loss_sum += loss.value() * chunk.len() as f64;
            seen += chunk.len();
            epoch_preds.extend(argmax_rows(&logits));
            epoch_labels.extend(labels);
            state.clear_grads();
            tape.backward(&loss)?;
            adam.step(state)?;
        }
        let train_loss = loss_sum / seen as f64;
        let (train_accuracy, train_macro_f1, _, _) =
            metrics::classification_metrics(&epoch_labels, &epoch_preds, cfg.n_classes)?;

        let mut stats = EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            train_macro_f1,
            val_loss: None,
            val_accuracy: None,
            val_macro_f1: None,
        };
        if let Some(v) = val {
            let (preds, mean_loss) = predict(cfg, state, v, 1)?;
            let (acc, f1, _, _) = metrics::classification_metrics(&v.labels, &preds, cfg.n_classes)?;
            stats.val_loss = Some(mean_loss);
            stats.val_accuracy = Some(acc);
            stats.val_macro_f1 = Some(f1);
            let improved = match &best {
                Some((_, best_f1, _)) => f1 > *best_f1,
                None => true,
            };
            if improved {
                best = Some((epoch, f1, state.clone_values()));
            }
        }
        epochs.push(stats);
    }

    let best_epoch = match best {
        Some((epoch, _, values)) => {
            state.restore_values(&values)?;
            epoch
        }
        None => params.epochs,
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed: params.seed,
    })
}

fn predict_chunk(
    cfg: &ModelConfig,
    state: &ModelState,
    batch: &SensorBatch,
    chunk: &[usize],
) -> Result<(Vec<usize>, f64)> {
    let x = batch.to_tensor(chunk)?;
    let labels = batch.gather_labels(chunk);
    let mut tape = Tape::inactive();
    let (logits, _) = forward(&mut tape, &x, cfg, state)?;
    let loss = cross_entropy(&mut tape, &logits, &labels)?;
    Ok((argmax_rows(&logits), loss.value() * chunk.len() as f64))
}

#[cfg(feature = "parallel")]
fn predict_parallel(
    cfg: &ModelConfig,
    state: &ModelState,
    batch: &SensorBatch,
    chunks: &[&[usize]],
    workers: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    use rayon::prelude::*;
    let snapshot = state.snapshot();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::internal(format!("worker pool: {e}")))?;
    pool.install(|| {
        chunks
            .par_iter()
            .map(|chunk| {
                let local = ModelState::from_snapshot(&snapshot)?;
                predict_chunk(cfg, &local, batch, chunk)
            })
            .collect()
    })
}

/// Argmax predictions and mean loss over the whole batch, computed in
/// fixed-size chunks. `workers > 1` fans the chunks out over that many
/// threads (when the parallel feature is compiled in); the chunking, the
/// per-chunk math, and the fixed-order reduction make the result identical
/// for any worker count. Parameters are never mutated.
pub fn predict(
    cfg: &ModelConfig,
    state: &ModelState,
    batch: &SensorBatch,
    workers: usize,
) -> Result<(Vec<usize>, f64)> {
    if batch.is_empty() {
        return Err(Error::usage("cannot evaluate an empty window set"));
    }
    batch.check_labels(cfg.n_classes)?;
    check_batch_dims(cfg, batch, "evaluation")?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_CHUNK).collect();

    #[cfg(feature = "parallel")]
    let results: Vec<(Vec<usize>, f64)> = if workers > 1 && chunks.len() > 1 {
        predict_parallel(cfg, state, batch, &chunks, workers)?
    } else {
        chunks
            .iter()
            .map(|c| predict_chunk(cfg, state, batch, c))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(Vec<usize>, f64)> = {
        let _ = workers;
        chunks
            .iter()
            .map(|c| predict_chunk(cfg, state, batch, c))
            .collect::<Result<_>>()?
    };

    let mut preds = Vec::with_capacity(batch.len());
    let mut loss_sum = 0.0;
    for (p, l) in results {
        preds.extend(p);
        loss_sum += l;
    }
    Ok((preds, loss_sum / batch.len() as f64))
}

/// Full evaluation of a split: metrics plus the model's size and per-window
/// cost. Side-effect-free — the parameter digest is unchanged afterwards.
pub fn evaluate_split(
    cfg: &ModelConfig,
    state: &ModelState,
    batch: &SensorBatch,
    workers: usize,
) -> Result<MetricsReport> {
    let (preds, mean_loss) = predict(cfg, state, batch, workers)?;
    let (accuracy, macro_f1, per_class, confusion) =
        metrics::classification_metrics(&batch.labels, &preds, cfg.n_classes)?;
    Ok(MetricsReport {
        accuracy,
        macro_f1,
        mean_loss,
        per_class,
        confusion,
        param_count: metrics::count_params(state),
        flops_per_window: metrics::count_flops(cfg).total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits_of(data: Vec<f64>, b: usize, c: usize) -> Tensor {
        Tensor::param_from_vec(data, &[b, c]).unwrap()
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        let mut tape = Tape::inactive();
        let logits = logits_of(vec![0.5; 4], 1, 4);
        let loss = cross_entropy(&mut tape, &logits, &[2]).unwrap();
        assert!((loss.value() - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reference_two_class_value() {
        let mut tape = Tape::inactive();
        let logits = logits_of(vec![1.0, 2.0], 1, 2);
        let loss = cross_entropy(&mut tape, &logits, &[0]).unwrap();
        assert!((loss.value() - 1.3132616875182228).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let mut tape = Tape::inactive();
        let logits = logits_of(vec![1e6, 0.0, 0.0], 1, 3);
        let loss = cross_entropy(&mut tape, &logits, &[0]).unwrap();
        assert!(loss.value().abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut tape = Tape::inactive();
        let logits = logits_of(vec![1e6, -1e6, 750.0, -750.0], 2, 2);
        let loss = cross_entropy(&mut tape, &logits, &[1, 0]).unwrap();
        assert!(loss.value().is_finite());
    }

    #[test]
    fn gradient_is_softmax_minus_onehot_over_b() {
        let mut tape = Tape::new();
        let logits = logits_of(vec![0.3, -0.1, 0.7, 0.2, 0.0, -0.4], 2, 3);
        let loss = cross_entropy(&mut tape, &logits, &[2, 0]).unwrap();
        tape.backward(&loss).unwrap();
        let g = logits.grad().unwrap();
        let data = logits.to_vec();
        for row in 0..2 {
            let x = &data[row * 3..(row + 1) * 3];
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = x.iter().map(|v| (v - m).exp()).sum();
            for j in 0..3 {
                let p = (x[j] - m).exp() / denom;
                let onehot = if (row == 0 && j == 2) || (row == 1 && j == 0) { 1.0 } else { 0.0 };
                assert!((g[row * 3 + j] - (p - onehot) / 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let logits = logits_of(vec![0.4, -0.2, 0.1, 0.9, -0.6, 0.3], 2, 3);
        let labels = [1usize, 2];
        let err = crate::tensor::gradcheck::finite_diff_check(
            |tape| cross_entropy(tape, &logits, &labels),
            &logits,
            crate::tensor::gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn out_of_range_label_is_a_data_error() {
        let mut tape = Tape::inactive();
        let logits = logits_of(vec![0.0, 0.0], 1, 2);
        let e = cross_entropy(&mut tape, &logits, &[2]).err().expect("must fail");
        assert!(matches!(e, Error::Data { .. }), "{e}");
    }

    #[test]
    fn adam_zero_grad_leaves_parameter_unchanged() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let before = state.values_digest();
        // zero gradients everywhere
        for (_, t) in state.params() {
            t.add_to_grad(&vec![0.0; t.numel()]);
        }
        let mut adam = AdamState::new(&state, 0.001);
        adam.step(&state).unwrap();
        assert_eq!(state.values_digest(), before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let (name, first) = state.params().next().map(|(n, t)| (n.to_string(), t.clone())).unwrap();
        let before = first.to_vec();
        for (n, t) in state.params() {
            let g = if n == name { 3.7 } else { 0.0 };
            t.add_to_grad(&vec![g; t.numel()]);
        }
        let mut adam = AdamState::new(&state, 0.05);
        adam.step(&state).unwrap();
        let after = first.to_vec();
        for (b, a) in before.iter().zip(&after) {
            // bias correction makes the first update exactly -lr * sign(g) up to eps
            assert!(((b - a) - 0.05).abs() < 1e-8, "step {}", b - a);
        }
    }

    #[test]
    fn adam_matches_a_hand_rolled_two_step_trace() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let mut adam = AdamState::new(&state, 0.01);
        let grads = [0.5, -1.25];
        // reference trace for one scalar coordinate of the first tensor
        let first = state.params().next().unwrap().1.clone();
        let mut x = first.to_vec()[0];
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (step, &g) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        }
        for &g in &grads {
            state.clear_grads();
            for (_, t) in state.params() {
                t.add_to_grad(&vec![g; t.numel()]);
            }
            adam.step(&state).unwrap();
        }
        assert!((first.to_vec()[0] - x).abs() < 1e-12);
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn missing_gradient_is_a_usage_error() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let mut adam = AdamState::new(&state, 0.001);
        let e = adam.step(&state).err().expect("must fail");
        assert!(matches!(e, Error::Usage(_)), "{e}");
    }

    fn tiny_batch(cfg: &ModelConfig, b: usize, seed: u64) -> SensorBatch {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wn = cfg.n_sensors * cfg.m_vars * cfg.window_len;
        let mut batch = SensorBatch::empty(cfg.n_sensors, cfg.m_vars, cfg.window_len);
        for i in 0..b {
            let label = i % cfg.n_classes;
            // class-dependent offset makes the set learnable
            let w: Vec<f64> = (0..wn)
                .map(|_| rng.gen_range(-0.1..0.1) + label as f64)
                .collect();
            batch.windows.extend(w);
            batch.labels.push(label);
            batch.subjects.push("s0".to_string());
        }
        batch
    }

    #[test]
    fn zero_learning_rate_changes_nothing_and_reports_initial_loss() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let batch = tiny_batch(&cfg, 8, 7);
        let digest = state.values_digest();
        let params = TrainParams { epochs: 1, batch_size: 8, lr: 0.0, seed: 0 };
        let report = train_epochs(&cfg, &state, &batch, None, &params).unwrap();
        assert_eq!(state.values_digest(), digest);
        let (_, loss0) = predict(&cfg, &state, &batch, 1).unwrap();
        assert!((report.epochs[0].train_loss - loss0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_gives_identical_loss_sequences() {
        let cfg = ModelConfig::tiny();
        let batch = tiny_batch(&cfg, 10, 3);
        let params = TrainParams { epochs: 3, batch_size: 4, lr: 0.01, seed: 5 };
        let run = |_: ()| {
            let state = ModelState::init(&cfg).unwrap();
            train_epochs(&cfg, &state, &batch, None, &params)
                .unwrap()
                .epochs
                .iter()
                .map(|e| e.train_loss)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(()), run(()));
    }

    #[test]
    fn loss_decreases_on_a_learnable_set() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let batch = tiny_batch(&cfg, 12, 11);
        let params = TrainParams { epochs: 5, batch_size: 4, lr: 0.01, seed: 0 };
        let report = train_epochs(&cfg, &state, &batch, None, &params).unwrap();
        let first = report.epochs.first().unwrap().train_loss;
        let last = report.epochs.last().unwrap().train_loss;
        assert!(last < first, "no learning signal: {first} -> {last}");
    }

    #[test]
    fn best_epoch_checkpoint_is_restored() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let train = tiny_batch(&cfg, 12, 2);
        let val = tiny_batch(&cfg, 6, 9);
        let params = TrainParams { epochs: 4, batch_size: 4, lr: 0.02, seed: 1 };
        let report = train_epochs(&cfg, &state, &train, Some(&val), &params).unwrap();
        let best = &report.epochs[report.best_epoch - 1];
        let check = evaluate_split(&cfg, &state, &val, 1).unwrap();
        assert!((check.macro_f1 - best.val_macro_f1.unwrap()).abs() < 1e-12);
        let top = report
            .epochs
            .iter()
            .map(|e| e.val_macro_f1.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.val_macro_f1.unwrap(), top);
    }

    #[test]
    fn empty_training_set_is_a_usage_error() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let batch = SensorBatch::empty(cfg.n_sensors, cfg.m_vars, cfg.window_len);
        let e = train_epochs(&cfg, &state, &batch, None, &TrainParams::default())
            .err()
            .expect("must fail");
        assert!(matches!(e, Error::Usage(_)), "{e}");
    }

    #[test]
    fn evaluate_split_never_mutates_parameters() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        let batch = tiny_batch(&cfg, 9, 4);
        let digest = state.values_digest();
        let report = evaluate_split(&cfg, &state, &batch, 1).unwrap();
        assert_eq!(state.values_digest(), digest);
        assert!(report.accuracy >= 0.0 && report.accuracy <= 100.0);
        assert_eq!(report.param_count, metrics::count_params(&state));
    }

    #[test]
    fn prediction_is_worker_count_independent() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        // enough windows for three chunks
        let batch = tiny_batch(&cfg, 150, 6);
        let (p1, l1) = predict(&cfg, &state, &batch, 1).unwrap();
        for workers in [2, 3] {
            let (p, l) = predict(&cfg, &state, &batch, workers).unwrap();
            assert_eq!(p, p1);
            assert_eq!(l.to_bits(), l1.to_bits(), "workers={workers}");
        }
    }

    #[test]
    fn constant_logit_model_predicts_one_class() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::init(&cfg).unwrap();
        // zero every parameter: logits are all equal, argmax picks class 0
        for (_, t) in state.params() {
            t.set_data(&vec![0.0; t.numel()]).unwrap();
        }
        let batch = tiny_batch(&cfg, 9, 8);
        let (preds, _) = predict(&cfg, &state, &batch, 1).unwrap();
        assert!(preds.iter().all(|&p| p == preds[0]));
    }
}
