use criterion::{criterion_group, criterion_main, Criterion};
use hsvar_bench::{app_instance, benchmark_instance, truth_weights};
use std::hint::black_box;

fn bench_forward_backward(c: &mut Criterion) {
    let (sim, truth, _) = app_instance();
    let ell = hsvar_core::emission_loglik(&sim.data, &truth).unwrap();
    c.bench_function("forward_backward_T1096_K2_m28", |b| {
        b.iter(|| {
            let post =
                hsvar_core::forward_backward(black_box(&sim.data), &truth, &ell).unwrap();
            black_box(post.loglik)
        })
    });
}

fn bench_emission_loglik(c: &mut Criterion) {
    let (sim, truth, _) = app_instance();
    c.bench_function("emission_loglik_T1096_p5_H7", |b| {
        b.iter(|| black_box(hsvar_core::emission_loglik(black_box(&sim.data), &truth).unwrap()))
    });
}

fn bench_weighted_lasso(c: &mut Criterion) {
    let (sim, truth, _) = app_instance();
    let weights = truth_weights(&sim);
    let dims = truth.dims;
    c.bench_function("weighted_lasso_T1096_p5_H7", |b| {
        b.iter(|| {
            black_box(
                hsvar_core::weighted_lasso_fit(black_box(&sim.data), &dims, &weights, 40.0)
                    .unwrap(),
            )
        })
    });
}

fn bench_em_fit(c: &mut Criterion) {
    let (sim, _, mut config) = benchmark_instance();
    config.max_iter = 10;
    let mut group = c.benchmark_group("em");
    group.sample_size(10);
    group.bench_function("fit_10_iterations_T1100_K2", |b| {
        b.iter(|| black_box(hsvar_core::fit(&sim.data, 2, 1.0, 1, &config).unwrap().icl))
    });
    group.finish();
}

fn bench_risk_row(c: &mut Criterion) {
    let (sim, truth, _) = app_instance();
    let mix = hsvar_core::predictive_mixture(100, &sim.data, &truth).unwrap();
    c.bench_function("shapley_p5_single_time", |b| {
        b.iter(|| {
            black_box(
                hsvar_core::risk::shapley_at(&mix, 0.05, 0.05, hsvar_core::RiskMeasure::Mcovar)
                    .unwrap(),
            )
        })
    });
}

criterion_group!(
    benches,
    bench_forward_backward,
    bench_emission_loglik,
    bench_weighted_lasso,
    bench_em_fit,
    bench_risk_row
);
criterion_main!(benches);
