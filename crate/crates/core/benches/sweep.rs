//! Seed sweep throughput: the crate's run mapper against a plain sequential
//! loop. Build with `--no-default-features` to make both sides sequential.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use permtx::harness::scenarios::shipped;
use permtx::harness::suite::{map_runs, violations};

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for name in ["quorum-ibft-basic", "aura-partition", "sawtooth-deps"] {
        let cfg = shipped(name).unwrap();
        let seeds: Vec<u64> = (0..16).collect();
        group.bench_with_input(BenchmarkId::new("sequential", name), &seeds, |b, seeds| {
            b.iter(|| seeds.iter().map(|s| violations(&cfg, *s).unwrap()).collect::<Vec<_>>())
        });
        let mapper = if cfg!(feature = "parallel") { "rayon" } else { "map_runs-sequential" };
        group.bench_with_input(BenchmarkId::new(mapper, name), &seeds, |b, seeds| {
            b.iter(|| map_runs(seeds, |s| violations(&cfg, *s).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
