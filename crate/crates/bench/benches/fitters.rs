use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isoflop_core::approach2::{run_approach2, SweepAxis};
use isoflop_core::direct::rss_objective_grad;
use isoflop_core::fit::{fit_method, FitOptions};
use isoflop_core::simulate::{add_noise, build_experiment, standard_budgets, BiasSpec, GridSpec, NoiseSpec};
use isoflop_core::sweep::{run_sweep, SweepConfig};
use isoflop_core::vpnls::{vp_objective_nnls, vp_objective_ols_grad};
use isoflop_core::{Dataset, LossSurface, Method, Observation};

fn noisy_points() -> Vec<Observation> {
    let grid = GridSpec::named("L", 15).unwrap();
    let exp = build_experiment(&LossSurface::ASYMMETRIC, &standard_budgets(), &grid, BiasSpec::Drift { end_factor: 3.0 })
        .unwrap();
    add_noise(&exp, NoiseSpec { sigma: 0.05, seed: 1 }).unwrap().points
}

fn objectives(c: &mut Criterion) {
    let data = Dataset::from_observations(&noisy_points()).unwrap();
    let s = LossSurface::ASYMMETRIC;
    let mut g = c.benchmark_group("objective");
    g.bench_function("rss_grad_5d", |b| b.iter(|| rss_objective_grad(black_box(&s.as_array()), &data)));
    g.bench_function("vp_ols_grad", |b| b.iter(|| vp_objective_ols_grad(black_box(s.alpha), black_box(s.beta), &data)));
    g.bench_function("vp_nnls", |b| b.iter(|| vp_objective_nnls(black_box(s.alpha), black_box(s.beta), &data)));
    g.finish();
}

fn fitters(c: &mut Criterion) {
    let points = noisy_points();
    let opts = FitOptions::default();
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("approach2", |b| b.iter(|| run_approach2(black_box(&points), SweepAxis::Tokens)));
    for m in [
        Method::DirectNaive,
        Method::DirectMle,
        Method::DirectLseLog,
        Method::VpnlsNelderMead,
        Method::VpnlsQuasiNewton,
        Method::VpnlsGrid,
    ] {
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| b.iter(|| fit_method(m, black_box(&points), &opts)));
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let cfg = SweepConfig {
        sigmas: vec![0.05],
        budget_counts: vec![3],
        points_per_curve: vec![16],
        realizations: 4,
        ..SweepConfig::exponent_inference()
    };
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    g.bench_function("exponent_inference_4x5", |b| b.iter(|| run_sweep(black_box(&cfg))));
    g.finish();
}

criterion_group!(benches, objectives, fitters, sweep);
criterion_main!(benches);
