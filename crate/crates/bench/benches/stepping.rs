use coagsens::coupling::{run_trajectory, step_double, step_plain, step_single};
use coagsens::oracle::{integrate_smoluchowski, DenseMeasure, TailClosure};
use coagsens::{ExperimentConfig, KernelFamily, KernelSpec, SimRng};
use coagsens_bench::{aged_state, kernels};
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::SeedableRng;

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for family in [KernelFamily::Additive, KernelFamily::Soot] {
        let k = kernels(family);
        let state = aged_state(&k, 1 << 14, 3);
        group.bench_function(BenchmarkId::new("single", family), |b| {
            let mut rng = SimRng::seed_from_u64(1);
            b.iter_batched_ref(
                || state.clone(),
                |s| {
                    for _ in 0..64 {
                        step_single(s, &k, &mut rng);
                    }
                },
                BatchSize::SmallInput,
            )
        });
        group.bench_function(BenchmarkId::new("double", family), |b| {
            let mut rng = SimRng::seed_from_u64(1);
            b.iter_batched_ref(
                || state.clone(),
                |s| {
                    for _ in 0..64 {
                        step_double(s, &k, &mut rng);
                    }
                },
                BatchSize::SmallInput,
            )
        });
        group.bench_function(BenchmarkId::new("plain", family), |b| {
            let mut rng = SimRng::seed_from_u64(1);
            let fresh = coagsens::CoupledState::monodisperse(1 << 14, &k.majorant).unwrap();
            b.iter_batched_ref(
                || fresh.clone(),
                |s| {
                    for _ in 0..64 {
                        step_plain(s, &k.plus, &mut rng);
                    }
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn trajectories(c: &mut Criterion) {
    let mut group = c.benchmark_group("trajectory");
    group.sample_size(10);
    for alg in ["independent", "single", "double"] {
        let config = ExperimentConfig::parse_str(&format!(
            "n = 4096\nt_end = 1\noutput_times = 1\nalgorithm = {alg}\n"
        ))
        .unwrap();
        let mut seed = 0;
        group.bench_function(alg, |b| {
            b.iter(|| {
                seed += 1;
                run_trajectory(&config, seed).unwrap()
            })
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let k = KernelSpec::new(KernelFamily::Additive, 1.0).unwrap();
    let mu0 = DenseMeasure::monodisperse(256);
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("smoluchowski_256_to_t1", |b| {
        b.iter(|| integrate_smoluchowski(&k, &mu0, &[1.0], 1e-3, TailClosure::Lumped).unwrap())
    });
    group.finish();
}

criterion_group!(benches, steps, trajectories, oracle);
criterion_main!(benches);
