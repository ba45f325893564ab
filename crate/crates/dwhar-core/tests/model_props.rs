//! Structural properties: permutation equivariance/invariance, row-stochastic
//! attention, shape contracts on randomized configurations, and bitwise
//! run-to-run determinism.

use dwhar_core::model::{self, forward, ModelConfig, ModelState};
use dwhar_core::tensor::{ops, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Self-attention with projections shared across sensors commutes with any
/// permutation of the sensor tokens, bit for bit: the softmax and the
/// attention-weighted sums reduce in a canonical order, so reordering the
/// source sensors cannot even change rounding.
#[test]
fn attention_is_sensor_permutation_equivariant_exactly() {
    let mut cfg = ModelConfig::tiny();
    cfg.n_sensors = 4; // a permutation with structure
    let state = ModelState::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (b, n, f) = (2, cfg.n_sensors, cfg.token_len());
    let xv = rand_vec(&mut rng, b * n * f);
    let x = Tensor::from_vec(xv.clone(), &[b, n, f]).unwrap();

    let perm = [2usize, 0, 3, 1];
    let mut xp = vec![0.0; xv.len()];
    for bb in 0..b {
        for i in 0..n {
            let src = &xv[(bb * n + perm[i]) * f..(bb * n + perm[i] + 1) * f];
            xp[(bb * n + i) * f..(bb * n + i + 1) * f].copy_from_slice(src);
        }
    }
    let xp = Tensor::from_vec(xp, &[b, n, f]).unwrap();

    let mut tape = Tape::inactive();
    let (y, attn) = model::csi_attend(&mut tape, &x, &cfg, &state).unwrap();
    let (yp, attnp) = model::csi_attend(&mut tape, &xp, &cfg, &state).unwrap();

    let (yv, ypv) = (y.to_vec(), yp.to_vec());
    for bb in 0..b {
        for i in 0..n {
            let a = &yv[(bb * n + perm[i]) * f..(bb * n + perm[i] + 1) * f];
            let bslice = &ypv[(bb * n + i) * f..(bb * n + i + 1) * f];
            assert_eq!(a, bslice, "output token {i} is not the permuted original");
        }
    }
    // attention permutes on both sensor axes
    let h = cfg.n_heads;
    let (av, apv) = (attn.to_vec(), attnp.to_vec());
    for bb in 0..b {
        for head in 0..h {
            for i in 0..n {
                for j in 0..n {
                    let orig = av[((bb * h + head) * n + perm[i]) * n + perm[j]];
                    let perd = apv[((bb * h + head) * n + i) * n + j];
                    assert_eq!(orig.to_bits(), perd.to_bits());
                }
            }
        }
    }
}

/// The variable mean inside each channel reduces in a canonical order, so
/// shuffling the variables of a channel leaves the pooled value bitwise
/// unchanged.
#[test]
fn pooling_is_intra_channel_permutation_invariant_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (bn, d, m, t) = (3, 4, 5, 6);
    let xv = rand_vec(&mut rng, bn * d * m * t);
    let x = Tensor::from_vec(xv.clone(), &[bn, d * m, t]).unwrap();

    let perm = [4usize, 2, 0, 3, 1];
    let mut xp = vec![0.0; xv.len()];
    for b in 0..bn {
        for dd in 0..d {
            for mm in 0..m {
                for tt in 0..t {
                    xp[((b * d + dd) * m + mm) * t + tt] =
                        xv[((b * d + dd) * m + perm[mm]) * t + tt];
                }
            }
        }
    }
    let xp = Tensor::from_vec(xp, &[bn, d * m, t]).unwrap();

    let mut tape = Tape::inactive();
    let y = model::gta_pool(&mut tape, &x, m).unwrap();
    let yp = model::gta_pool(&mut tape, &xp, m).unwrap();
    assert_eq!(y.shape(), &[bn, d, t]);
    for (a, b) in y.to_vec().iter().zip(yp.to_vec()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

/// Depth-wise convolution treats channels independently, so permuting the
/// channels and their kernels together permutes the outputs identically.
#[test]
fn depthwise_conv_is_channel_permutation_equivariant_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (b, c, t, k) = (2, 6, 8, 3);
    let xv = rand_vec(&mut rng, b * c * t);
    let wv = rand_vec(&mut rng, c * k);
    let bias = rand_vec(&mut rng, c);
    let perm = [3usize, 5, 1, 0, 4, 2];

    let run = |x: &[f64], w: &[f64], bv: &[f64]| -> Vec<f64> {
        let x = Tensor::from_vec(x.to_vec(), &[b, c, t]).unwrap();
        let w = Tensor::from_vec(w.to_vec(), &[c, 1, k]).unwrap();
        let bv = Tensor::from_vec(bv.to_vec(), &[c]).unwrap();
        let mut tape = Tape::inactive();
        ops::conv1d_grouped(&mut tape, &x, &w, Some(&bv), 1, (1, 1), c)
            .unwrap()
            .to_vec()
    };

    let y = run(&xv, &wv, &bias);
    let mut xp = vec![0.0; xv.len()];
    let mut wp = vec![0.0; wv.len()];
    let mut bp = vec![0.0; bias.len()];
    for ci in 0..c {
        for bb in 0..b {
            for tt in 0..t {
                xp[(bb * c + ci) * t + tt] = xv[(bb * c + perm[ci]) * t + tt];
            }
        }
        wp[ci * k..(ci + 1) * k].copy_from_slice(&wv[perm[ci] * k..(perm[ci] + 1) * k]);
        bp[ci] = bias[perm[ci]];
    }
    let yp = run(&xp, &wp, &bp);
    for ci in 0..c {
        for bb in 0..b {
            for tt in 0..t {
                assert_eq!(
                    y[(bb * c + perm[ci]) * t + tt].to_bits(),
                    yp[(bb * c + ci) * t + tt].to_bits()
                );
            }
        }
    }
}

#[test]
fn attention_rows_are_stochastic() {
    for seed in 0..5 {
        let mut cfg = ModelConfig::tiny();
        cfg.n_sensors = 3;
        cfg.seed = seed;
        let state = ModelState::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (b, n, f, h) = (2, cfg.n_sensors, cfg.token_len(), cfg.n_heads);
        let x = Tensor::from_vec(rand_vec(&mut rng, b * n * f), &[b, n, f]).unwrap();
        let mut tape = Tape::inactive();
        let (_, attn) = model::csi_attend(&mut tape, &x, &cfg, &state).unwrap();
        let av = attn.to_vec();
        for row in 0..b * h * n {
            let sum: f64 = av[row * n..(row + 1) * n].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {row} sums to {sum}");
            assert!(av[row * n..(row + 1) * n].iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn shape_contracts_hold_on_randomized_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut tested = 0;
    while tested < 10 {
        let mut cfg = ModelConfig::new(
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            rng.gen_range(6..=30),
            rng.gen_range(2..=6),
        );
        cfg.d_embed = [4, 6, 8][rng.gen_range(0..3usize)];
        cfg.d_state = rng.gen_range(1..=4);
        cfg.n_heads = [1, 2][rng.gen_range(0..2usize)];
        cfg.enable_gta = rng.gen_bool(0.8);
        cfg.enable_csi = rng.gen_bool(0.8);
        cfg.gta_before_csi = rng.gen_bool(0.5);
        if cfg.validate().is_err() {
            continue;
        }
        tested += 1;
        let state = ModelState::init(&cfg).unwrap();
        let b = rng.gen_range(1..=3);
        let x = Tensor::from_vec(
            rand_vec(&mut rng, b * cfg.n_sensors * cfg.m_vars * cfg.window_len),
            &[b, cfg.n_sensors, cfg.m_vars, cfg.window_len],
        )
        .unwrap();
        let mut tape = Tape::inactive();
        let (logits, attn) = forward(&mut tape, &x, &cfg, &state).unwrap();
        assert_eq!(logits.shape(), &[b, cfg.n_classes], "{cfg:?}");
        assert!(logits.to_vec().iter().all(|v| v.is_finite()));
        match attn {
            Some(a) => {
                assert!(cfg.enable_csi);
                assert_eq!(a.shape(), &[b, cfg.n_heads, cfg.n_sensors, cfg.n_sensors]);
            }
            None => assert!(!cfg.enable_csi),
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic_across_calls() {
    let cfg = ModelConfig::tiny();
    let state = ModelState::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let b = 4;
    let x = Tensor::from_vec(
        rand_vec(&mut rng, b * cfg.n_sensors * cfg.m_vars * cfg.window_len),
        &[b, cfg.n_sensors, cfg.m_vars, cfg.window_len],
    )
    .unwrap();
    let run = || {
        let mut tape = Tape::inactive();
        let (logits, attn) = forward(&mut tape, &x, &cfg, &state).unwrap();
        (logits.to_vec(), attn.unwrap().to_vec())
    };
    let (l1, a1) = run();
    let (l2, a2) = run();
    assert!(l1.iter().zip(&l2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(a1.iter().zip(&a2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

/// The same initialization seed must produce the same parameters, and
/// different seeds must not.
#[test]
fn initialization_is_seed_deterministic() {
    let cfg = ModelConfig::tiny();
    let a = ModelState::init(&cfg).unwrap();
    let b = ModelState::init(&cfg).unwrap();
    assert_eq!(a.values_digest(), b.values_digest());
    let mut cfg2 = cfg.clone();
    cfg2.seed = 1;
    let c = ModelState::init(&cfg2).unwrap();
    assert_ne!(a.values_digest(), c.values_digest());
}
