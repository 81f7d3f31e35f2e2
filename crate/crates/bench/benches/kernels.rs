use contacton_bench::{chart, holomorphic, trivial_strip};
use contacton_core::connection::{verify_triad_axioms, StandardConnection};
use contacton_core::dynamics::{integrate_isotopy, ContactIsotopy};
use contacton_core::fields::{equation_report, grid_derivatives};
use contacton_core::solver::{prepare, solve};
use contacton_core::validators::{fundamental_equation_residual, weitzenbock_laplacian_residual, ValidatorOptions};
use contacton_core::HamiltonianSpec;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn flows(c: &mut Criterion) {
    let ch = chart();
    let iso = ContactIsotopy::new(&ch, &HamiltonianSpec::LinearZ, 1e-3);
    c.bench_function("psi_1_linear_z_rk4_1e-3", |b| b.iter(|| iso.psi(1.0, black_box(&[0.3, -0.2, 0.7])).unwrap()));
    c.bench_function("triad_axioms_100_points", |b| b.iter(|| verify_triad_axioms(&ch, &StandardConnection::new(&ch), 100, black_box(1)).unwrap()));
}

fn fields(c: &mut Criterion) {
    let ch = chart();
    let zero = HamiltonianSpec::zero();
    let iso = integrate_isotopy(&ch, &zero, 100).unwrap();
    let mut g = c.benchmark_group("strip");
    for m in [64, 128] {
        let u = holomorphic(m);
        g.bench_with_input(BenchmarkId::new("grid_derivatives", m), &u, |b, u| b.iter(|| grid_derivatives(u.grid(), u.data(), 3)));
        g.bench_with_input(BenchmarkId::new("equation_report", m), &u, |b, u| b.iter(|| equation_report(&ch, &zero, &iso, u).unwrap()));
        g.bench_with_input(BenchmarkId::new("fundamental", m), &u, |b, u| {
            b.iter(|| fundamental_equation_residual(&ch, &zero, &iso, u, &ValidatorOptions::default()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("weitzenbock", m), &u, |b, u| {
            b.iter(|| weitzenbock_laplacian_residual(&ch, &zero, &iso, u, &ValidatorOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("solver");
    g.sample_size(10);
    let (problem, seed, _) = prepare(&trivial_strip(128, 0.5)).unwrap();
    g.bench_function("gradient_128x64", |b| b.iter(|| problem.gradient(black_box(seed.data())).unwrap()));
    g.bench_function("solve_trivial_64x32", |b| b.iter(|| solve(&trivial_strip(64, 0.5)).unwrap()));
    g.finish();
}

criterion_group!(benches, flows, fields, solver);
criterion_main!(benches);
