use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hpconv_core::bandit::{bandit_round, beta_t, BanditConfig, BanditState};
use hpconv_core::concentration::Guarantee;
use hpconv_core::harness::{run_trial, DynamicConfig, ExperimentSpec};
use hpconv_core::linalg::{log_abs_det, sherman_morrison, solve_small, Matrix};
use hpconv_core::pca::{pca_incremental_update, sphere_sample, OjaState, Spectrum};
use hpconv_core::sgd::{sgd_step, SgdConfig};

fn spd(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = Matrix::from_row_major(
        d,
        d,
        (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    a.transpose()
        .matmul(&a)
        .unwrap()
        .add(&Matrix::identity(d))
        .unwrap()
}

fn linalg(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("linalg");
    for d in [4usize, 16] {
        let a = spd(d, &mut rng);
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = Matrix::from_row_major(d, 1, u.clone()).unwrap();
        group.bench_with_input(BenchmarkId::new("sherman_morrison", d), &d, |b, _| {
            b.iter(|| sherman_morrison(black_box(&a), &u, &u, 0.5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("solve_small", d), &d, |b, _| {
            b.iter(|| solve_small(black_box(&a), &rhs).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("log_abs_det", d), &d, |b, _| {
            b.iter(|| log_abs_det(black_box(&a)).unwrap())
        });
    }
    group.finish();
}

fn steps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = Spectrum::default();
    let mut group = c.benchmark_group("steps");

    let mut axis = OjaState::local_init(&spec, 0.5).unwrap();
    group.bench_function("oja_axis", |b| {
        b.iter(|| axis.step_axis(spec.sample_index(&mut rng), black_box(1e-3), spec.k()))
    });

    let general = OjaState::local_init(&spec, 0.5).unwrap();
    let x = sphere_sample(&spec, &mut rng);
    group.bench_function("oja_incremental", |b| {
        b.iter(|| pca_incremental_update(black_box(&general), &x, 1e-3, &spec).unwrap())
    });

    let cfg = SgdConfig::default();
    let mut state = cfg.initial_state();
    group.bench_function("sgd", |b| {
        b.iter(|| state = sgd_step(black_box(&state), &cfg, &mut rng))
    });

    let bcfg = BanditConfig::default();
    let beta = beta_t(&bcfg);
    let mut bstate = BanditState::new(&bcfg);
    group.bench_function("bandit_round", |b| {
        b.iter(|| bandit_round(&mut bstate, &bcfg, beta, &mut rng).unwrap())
    });
    group.finish();
}

fn trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial");
    group.sample_size(10);
    for (name, dynamic) in [("toy", DynamicConfig::toy()), ("sgd", DynamicConfig::sgd())] {
        let spec = ExperimentSpec::new(dynamic, Guarantee::Uniform, 1, 10_000, 0.1, 0).unwrap();
        group.bench_function(name, |b| b.iter(|| run_trial(black_box(&spec), 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, linalg, steps, trials);
criterion_main!(benches);
