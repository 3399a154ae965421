//! Parallel vs sequential comparison for the core voxel loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfs_core::grid::GridSpec;
use mfs_core::metrics::surface_distances;
use mfs_core::par::set_force_sequential;
use mfs_core::resample::{resample, Interp};
use mfs_core::volume::{BinaryMask, Modality, ScalarVolume};

fn bench_resample(c: &mut Criterion) {
    let grid = GridSpec::with_spacing([64, 64, 64], [2.0, 1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values: Vec<f32> = (0..grid.voxel_count())
        .map(|_| rng.gen_range(-1000.0..1500.0))
        .collect();
    let vol = ScalarVolume::new(grid, Modality::Ct, values).unwrap();
    let target = GridSpec::with_spacing([80, 80, 80], [1.6, 0.8, 0.8]);

    let mut group = c.benchmark_group("resample_trilinear_64c_to_80c");
    for &seq in &[false, true] {
        let name = if seq { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |b, &seq| {
            set_force_sequential(seq);
            b.iter(|| resample(&vol, &target, Interp::Trilinear).unwrap());
            set_force_sequential(false);
        });
    }
    group.finish();
}

fn bench_surface_distances(c: &mut Criterion) {
    let grid = GridSpec::with_spacing([64, 64, 64], [2.0, 1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut a = BinaryMask::empty(grid).unwrap();
    let mut b = BinaryMask::empty(grid).unwrap();
    // Two offset blobs.
    for z in 20..44 {
        for y in 20..44 {
            for x in 20..44 {
                if rng.gen_bool(0.8) {
                    a.set(z, y, x, true);
                }
                if rng.gen_bool(0.8) {
                    b.set(z.saturating_sub(3), y, x, true);
                }
            }
        }
    }

    let mut group = c.benchmark_group("surface_distances_64c");
    for &seq in &[false, true] {
        let name = if seq { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |bch, &seq| {
            set_force_sequential(seq);
            bch.iter(|| surface_distances(&a, &b).unwrap());
            set_force_sequential(false);
        });
    }
    group.finish();
}

criterion_group!(benches, bench_resample, bench_surface_distances);
criterion_main!(benches);
