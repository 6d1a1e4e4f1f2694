//! Kernel benchmarks comparing the rayon data-parallel paths against the
//! sequential fallback. `seq_map_index` is always the plain loop, while
//! `par_map_index` fans out over the rayon pool when the `parallel`
//! feature (default) is enabled; building with `--no-default-features`
//! makes both paths sequential, which benchmarks the fallback itself.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use hmwv_core::parallel::{par_map_index, seq_map_index};
use hmwv_core::reference;
use hmwv_core::sim;
use hmwv_core::tonal::{forward_backward, TonalParams};
use hmwv_core::transforms::Mdct;
use hmwv_core::transient::{upward_downward, TreeParams};

fn tonal_smoothing(c: &mut Criterion) {
    let params = TonalParams::decay(512, 0.95, 0.995, 1.0, 0.05, 1.0, 64.0).unwrap();
    let grid = sim::simulate_tonal(&params, 64, 512, 44100, 42)
        .unwrap()
        .grid;
    let mut group = c.benchmark_group("tonal_smoothing_512x64");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            par_map_index(grid.band_count(), |n| {
                forward_backward(grid.bin_row(n), params.bin(n)).unwrap().1
            })
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            seq_map_index(grid.band_count(), |n| {
                forward_backward(grid.bin_row(n), params.bin(n)).unwrap().1
            })
        })
    });
    group.finish();
}

fn tree_smoothing(c: &mut Criterion) {
    let params = TreeParams::uniform(10, 0.4, 0.6, 1.0, 0.05).unwrap();
    let trees: Vec<_> = (0..64)
        .map(|i| reference::sample_tree(&params, i).0)
        .collect();
    let mut group = c.benchmark_group("tree_smoothing_64x1023");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            par_map_index(trees.len(), |i| {
                upward_downward(&trees[i], &params).unwrap().log_likelihood
            })
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            seq_map_index(trees.len(), |i| {
                upward_downward(&trees[i], &params).unwrap().log_likelihood
            })
        })
    });
    group.finish();
}

fn monte_carlo_counts(c: &mut Criterion) {
    let params = TreeParams::uniform(8, 0.7, 0.65, 1.0, 0.1).unwrap();
    let mut group = c.benchmark_group("tree_count_sampling_20k");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let per_task: Vec<f64> = par_map_index(8, |t| {
                reference::mc_tree_total_count(&params, 2_500, t as u64).mean
            });
            per_task.iter().sum::<f64>() / 8.0
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| reference::mc_tree_total_count(&params, 20_000, 3).mean)
    });
    group.finish();
}

fn mdct_transform(c: &mut Criterion) {
    let mdct = Mdct::new(1024).unwrap();
    let signal: Vec<f64> = (0..32768).map(|i| (i as f64 * 0.01).sin()).collect();
    let mut group = c.benchmark_group("mdct_forward_32768");
    group.bench_function("forward", |b| {
        b.iter_batched(
            || signal.clone(),
            |s| mdct.forward(&s, 1024).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(
    benches,
    tonal_smoothing,
    tree_smoothing,
    monte_carlo_counts,
    mdct_transform
);
criterion_main!(benches);
