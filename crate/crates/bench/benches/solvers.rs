use contactdiff::dantzig;
use contactdiff::lcp::{solve_enumerative, solve_pgs};
use contactdiff::DantzigOptions;
use contactdiff_bench::frictional_batch;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn dantzig_sizes(c: &mut Criterion) {
    let mut g = c.benchmark_group("dantzig");
    for contacts in [2, 4, 6] {
        let batch = frictional_batch(3, contacts, 32);
        for (label, opts) in [("corrected", DantzigOptions::default()), ("legacy", DantzigOptions::legacy())] {
            g.bench_with_input(BenchmarkId::new(label, 2 * contacts), &batch, |b, batch| {
                b.iter(|| {
                    for p in batch {
                        let _ = black_box(dantzig::solve(p, &opts));
                    }
                })
            });
        }
    }
    g.finish();
}

fn baselines(c: &mut Criterion) {
    let mut g = c.benchmark_group("baselines");
    let batch = frictional_batch(4, 3, 16);
    g.bench_function("enumerative_n6", |b| {
        b.iter(|| {
            for p in &batch {
                let _ = black_box(solve_enumerative(p, 6));
            }
        })
    });
    g.bench_function("pgs_n6_200_sweeps", |b| {
        b.iter(|| {
            for p in &batch {
                let _ = black_box(solve_pgs(p, 200, 1.0));
            }
        })
    });
    g.finish();
}

criterion_group!(benches, dantzig_sizes, baselines);
criterion_main!(benches);
