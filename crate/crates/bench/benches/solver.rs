use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use drsplit::conic::{self, SubspaceBasis};
use drsplit::constrained::{admm_step, ADMMState, ConstrainedProblem};
use drsplit::dr::{dr_operator, run, StopRule};
use drsplit::prox::ProxFunction;

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn gauss_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

fn bench_operator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 64;
    let f = ProxFunction::indicator_subspace(&gauss_matrix(&mut rng, n, n / 2));
    let g = ProxFunction::indicator_orthant(n);
    let w = gauss(&mut rng, n);
    c.bench_function("dr_operator_subspace_orthant_64", |b| {
        b.iter(|| dr_operator(black_box(&f), black_box(&g), black_box(&w)).unwrap())
    });
}

fn bench_quadratic_run(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 32;
    let m = gauss_matrix(&mut rng, n, n);
    let q = &m * m.transpose() / (n as f64) + DMatrix::identity(n, n) * 0.5;
    let f = ProxFunction::quadratic(q, gauss(&mut rng, n)).unwrap();
    let g = ProxFunction::scaled_l1(0.3, n).unwrap();
    let w0 = gauss(&mut rng, n);
    let stop = StopRule {
        tol: 0.0,
        max_iters: 100,
        exact_zero: false,
    };
    c.bench_function("dr_run_quadratic_l1_32_x100", |b| {
        b.iter(|| run(black_box(&f), black_box(&g), black_box(&w0), &stop).unwrap())
    });
}

fn bench_identify(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let basis = SubspaceBasis::new(&gauss_matrix(&mut rng, 12, 5));
    let ones = DVector::from_element(12, 1.0);
    let stop = StopRule::default();
    c.bench_function("identify_supports_12", |b| {
        b.iter(|| conic::identify_supports(black_box(&basis), &ones, &stop).unwrap())
    });
}

fn bench_support_oracle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let basis = SubspaceBasis::new(&gauss_matrix(&mut rng, 12, 5));
    c.bench_function("support_partition_oracle_12", |b| {
        b.iter(|| drsplit::diagnostics::support_partition_oracle(black_box(&basis)).unwrap())
    });
}

fn bench_admm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 16;
    let m = gauss_matrix(&mut rng, n, n);
    let q = &m * m.transpose() / (n as f64) + DMatrix::identity(n, n) * 0.5;
    let prob = ConstrainedProblem::new(
        ProxFunction::quadratic(q.clone(), gauss(&mut rng, n)).unwrap(),
        ProxFunction::quadratic(q, gauss(&mut rng, n)).unwrap(),
        gauss_matrix(&mut rng, n, n),
        gauss_matrix(&mut rng, n, n),
        gauss(&mut rng, n),
    )
    .unwrap();
    let state = ADMMState::start(&prob, gauss(&mut rng, n), gauss(&mut rng, n)).unwrap();
    c.bench_function("admm_step_16", |b| {
        b.iter(|| admm_step(black_box(&prob), black_box(&state)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_operator,
    bench_quadratic_run,
    bench_identify,
    bench_support_oracle,
    bench_admm
);
criterion_main!(benches);
