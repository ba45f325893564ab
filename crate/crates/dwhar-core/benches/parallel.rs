//! Sequential vs data-parallel kernel comparison, plus a whole-model forward
//! pass. With the `parallel` feature off, only the sequential lanes run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dwhar_core::model::{forward, ModelConfig, ModelState};
use dwhar_core::tensor::kernels::{self, ConvDims, LinearDims, MatmulDims, ScanDims};
use dwhar_core::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = ConvDims {
        batch: 8,
        c_in: 64,
        t_in: 256,
        c_out: 64,
        k: 5,
        stride: 1,
        pad_l: 2,
        pad_r: 2,
        groups: 4,
        t_out: 256,
    };
    let x = rand_vec(&mut rng, d.batch * d.c_in * d.t_in);
    let w = rand_vec(&mut rng, d.c_out * d.c_in_per_group() * d.k);
    let bias = rand_vec(&mut rng, d.c_out);
    let mut out = vec![0.0; d.batch * d.c_out * d.t_out];

    let mut group = c.benchmark_group("conv1d_forward");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("seq", "8x64x256"), |b| {
        b.iter(|| kernels::conv1d_forward_seq(&x, &w, Some(&bias), &d, &mut out))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("par", "8x64x256"), |b| {
        b.iter(|| kernels::conv1d_forward_par(&x, &w, Some(&bias), &d, &mut out))
    });
    group.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = MatmulDims { batch: 8, m: 64, k: 64, n: 64, b_batched: true };
    let a = rand_vec(&mut rng, d.batch * d.m * d.k);
    let b = rand_vec(&mut rng, d.batch * d.k * d.n);
    let mut out = vec![0.0; d.batch * d.m * d.n];

    let mut group = c.benchmark_group("matmul_forward");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("seq", "8x64x64x64"), |bch| {
        bch.iter(|| kernels::matmul_forward_seq(&a, &b, &d, false, &mut out))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("par", "8x64x64x64"), |bch| {
        bch.iter(|| kernels::matmul_forward_par(&a, &b, &d, false, &mut out))
    });
    group.finish();
}

fn bench_linear(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = LinearDims { rows: 4096, d_in: 64, d_out: 64 };
    let x = rand_vec(&mut rng, d.rows * d.d_in);
    let w = rand_vec(&mut rng, d.d_out * d.d_in);
    let bias = rand_vec(&mut rng, d.d_out);
    let mut out = vec![0.0; d.rows * d.d_out];

    let mut group = c.benchmark_group("linear_forward");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("seq", "4096x64x64"), |b| {
        b.iter(|| kernels::linear_forward_seq(&x, &w, Some(&bias), &d, &mut out))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("par", "4096x64x64"), |b| {
        b.iter(|| kernels::linear_forward_par(&x, &w, Some(&bias), &d, &mut out))
    });
    group.finish();
}

fn bench_scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = ScanDims { batch: 8, t: 128, d_inner: 32, d_state: 16 };
    let u = rand_vec(&mut rng, d.batch * d.t * d.d_inner);
    let dt: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
    let b_in = rand_vec(&mut rng, d.batch * d.t * d.d_state);
    let c_in = rand_vec(&mut rng, d.batch * d.t * d.d_state);
    let a: Vec<f64> = (0..d.d_inner * d.d_state).map(|_| -rng.gen_range(0.05..2.0)).collect();
    let skip = rand_vec(&mut rng, d.d_inner);
    let mut y = vec![0.0; u.len()];

    let mut group = c.benchmark_group("scan_forward");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("seq", "8x128x32x16"), |b| {
        b.iter(|| kernels::scan_forward_seq(&u, &dt, &b_in, &c_in, &a, &skip, &d, &mut y, None))
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("par", "8x128x32x16"), |b| {
        b.iter(|| kernels::scan_forward_par(&u, &dt, &b_in, &c_in, &a, &skip, &d, &mut y, None))
    });
    group.finish();
}

fn bench_full_forward(c: &mut Criterion) {
    let cfg = ModelConfig::opportunity_default();
    let state = ModelState::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = 16;
    let x = Tensor::from_vec(
        rand_vec(&mut rng, b * cfg.n_sensors * cfg.m_vars * cfg.window_len),
        &[b, cfg.n_sensors, cfg.m_vars, cfg.window_len],
    )
    .unwrap();

    let mut group = c.benchmark_group("model_forward");
    group.sample_size(10);
    group.bench_function("default_config_b16", |bch| {
        bch.iter(|| {
            let mut tape = Tape::inactive();
            forward(&mut tape, &x, &cfg, &state).unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_conv,
    bench_matmul,
    bench_linear,
    bench_scan,
    bench_full_forward
);
criterion_main!(benches);
