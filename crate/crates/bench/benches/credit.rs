use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng as _;

use ircr_core::agents::{project_distribution, LogAtoms};
use ircr_core::envs::GridWorld;
use ircr_core::seed;
use ircr_core::tabular::{run_ircr_q, TabularConfig};
use ircr_core::{CreditTable, ReturnStats};

fn filled_table(episodes: usize, len: usize) -> (CreditTable, ReturnStats) {
    let mut rng = seed::rng(1, "bench-table");
    let mut table = CreditTable::new();
    let mut stats = ReturnStats::new();
    for _ in 0..episodes {
        let pairs: Vec<(usize, usize)> = (0..len)
            .map(|_| (rng.random_range(0..2500), rng.random_range(0..4)))
            .collect();
        table
            .ingest_pairs(&mut stats, pairs, -rng.random::<f64>() * 70.0)
            .unwrap();
    }
    (table, stats)
}

fn credit(c: &mut Criterion) {
    let (table, stats) = filled_table(2_000, 150);
    c.bench_function("guidance_reward lookup", |b| {
        let mut i = 0usize;
        b.iter(|| {
            i = (i + 7919) % 2500;
            black_box(table.guidance_reward(&stats, i, i % 4))
        })
    });
    c.bench_function("ingest 150-step episode", |b| {
        let pairs: Vec<(usize, usize)> = (0..150).map(|i| (i * 13 % 2500, i % 4)).collect();
        b.iter_batched(
            || (table.clone(), stats),
            |(mut t, mut s)| {
                t.ingest_pairs(&mut s, pairs.iter().copied(), -12.5)
                    .unwrap()
            },
            BatchSize::LargeInput,
        )
    });
}

fn projection(c: &mut Criterion) {
    let atoms = LogAtoms::new(51).unwrap();
    let probs = vec![1.0 / 51.0; 51];
    let target = atoms.target_atoms(0.37, 0.99, false);
    c.bench_function("project 51 atoms", |b| {
        b.iter(|| project_distribution(51, black_box(&target), black_box(&probs)).unwrap())
    });
}

fn tabular(c: &mut Criterion) {
    let mut group = c.benchmark_group("tabular");
    group.sample_size(10);
    let cfg = TabularConfig {
        episodes: 200,
        ..TabularConfig::default()
    };
    group.bench_function("200 guidance episodes on 50x50 grid", |b| {
        b.iter(|| {
            let mut env = GridWorld::new(Default::default()).unwrap();
            run_ircr_q(&mut env, &cfg, 0).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, credit, projection, tabular);
criterion_main!(benches);
