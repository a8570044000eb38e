use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spfl_core::allocator::{random_instance, MU_SCHEDULE};
use spfl_core::{
    alternate, optimize_bandwidth_penalty, optimize_bandwidth_sca, optimize_power, BandwidthMethod,
};

fn bench_power_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("power_step");
    for &devices in &[1usize, 5, 20] {
        let (coeffs, channel) = random_instance(devices, 7);
        let beta = vec![0.9 / devices as f64; devices];
        group.bench_with_input(BenchmarkId::from_parameter(devices), &devices, |b, _| {
            b.iter(|| optimize_power(&coeffs, &beta, &channel).unwrap());
        });
    }
    group.finish();
}

fn bench_bandwidth_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("bandwidth_step");
    for &devices in &[5usize, 20] {
        let (coeffs, channel) = random_instance(devices, 7);
        let beta = vec![0.9 / devices as f64; devices];
        let alpha = optimize_power(&coeffs, &beta, &channel).unwrap();
        group.bench_with_input(BenchmarkId::new("sca", devices), &devices, |b, _| {
            b.iter(|| optimize_bandwidth_sca(&coeffs, &alpha, &channel, &beta).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("penalty", devices), &devices, |b, _| {
            b.iter(|| {
                optimize_bandwidth_penalty(&coeffs, &alpha, &channel, &MU_SCHEDULE, &beta).unwrap()
            });
        });
    }
    group.finish();
}

fn bench_alternation(c: &mut Criterion) {
    let mut group = c.benchmark_group("alternate");
    group.sample_size(20);
    for &devices in &[5usize, 20] {
        let (coeffs, channel) = random_instance(devices, 7);
        group.bench_with_input(BenchmarkId::new("sca", devices), &devices, |b, _| {
            b.iter(|| alternate(&coeffs, &channel, BandwidthMethod::Sca, 1e-6).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("penalty", devices), &devices, |b, _| {
            b.iter(|| alternate(&coeffs, &channel, BandwidthMethod::Penalty, 1e-6).unwrap());
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_power_step,
    bench_bandwidth_steps,
    bench_alternation
);
criterion_main!(benches);
