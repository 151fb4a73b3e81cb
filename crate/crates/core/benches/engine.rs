use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gp3::verify::{lipschitz_envelope, run_analysis, ProblemSpec};
use gp3::{GpModel, Hyperrectangle, KernelFamily, KernelSpec, TrainingSet, Workers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(n: usize) -> GpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
    let ys = rows.iter().map(|x| x[0].sin() * x[1].cos()).collect();
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, vec![0.7, 0.7]).unwrap();
    GpModel::fit(TrainingSet::from_rows(&rows, ys).unwrap(), spec, 1e-3).unwrap()
}

fn workers() -> Vec<(&'static str, Workers)> {
    vec![("sequential", Workers::sequential()), ("parallel", Workers::new(0))]
}

fn single_wave(c: &mut Criterion) {
    let m = model(100);
    let domain = Hyperrectangle::from_bounds(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
    let problem = ProblemSpec::new(domain, 1e-6).with_initial_cells(10_000);
    let mut group = c.benchmark_group("single_wave_10k_cells");
    group.sample_size(10);
    for (name, w) in workers() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &w, |b, w| {
            b.iter(|| run_analysis(&problem, &m, &[], w).unwrap())
        });
    }
    group.finish();
}

fn envelope(c: &mut Criterion) {
    let m = model(100);
    let domain = Hyperrectangle::from_bounds(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
    let mut group = c.benchmark_group("lipschitz_envelope_16k_cells");
    group.sample_size(10);
    for (name, w) in workers() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &w, |b, w| {
            b.iter(|| lipschitz_envelope(&m, &domain, 1 << 14, w).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, single_wave, envelope);
criterion_main!(benches);
