//! Parallel vs sequential comparison for the differentiable kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mfs_core::par::set_force_sequential;
use mfs_nn::blocks::DeformConv3d;
use mfs_nn::ops::{conv3d_backward, conv3d_forward, ConvDims};
use mfs_nn::params::{GradStore, ParamStore};
use mfs_nn::tensor::Tensor;

fn randvec(n: usize, seed: u64) -> Vec<f32> {
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) as f32 - 0.5)
        .collect()
}

fn bench_conv3d(c: &mut Criterion) {
    let dims = ConvDims {
        cin: 8,
        cout: 8,
        k: 3,
    };
    let x = Tensor::from_vec([1, 8, 32, 32, 32], randvec(8 * 32768, 1));
    let w = randvec(dims.weight_len(), 2);
    let b = randvec(8, 3);

    let mut group = c.benchmark_group("conv3d_fwd_8ch_32c");
    group.sample_size(20);
    for &seq in &[false, true] {
        let name = if seq { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |bch, &seq| {
            set_force_sequential(seq);
            bch.iter(|| conv3d_forward(&x, &w, &b, dims));
            set_force_sequential(false);
        });
    }
    group.finish();

    let gout = Tensor::from_vec([1, 8, 32, 32, 32], randvec(8 * 32768, 4));
    let mut group = c.benchmark_group("conv3d_bwd_8ch_32c");
    group.sample_size(10);
    for &seq in &[false, true] {
        let name = if seq { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |bch, &seq| {
            set_force_sequential(seq);
            bch.iter(|| {
                let mut dw = vec![0.0f32; dims.weight_len()];
                let mut db = vec![0.0f32; 8];
                conv3d_backward(&x, &w, dims, &gout, &mut dw, &mut db)
            });
            set_force_sequential(false);
        });
    }
    group.finish();
}

fn bench_deform_conv(c: &mut Criterion) {
    let mut ps = ParamStore::<f32>::new();
    let block = DeformConv3d::build(&mut ps, "def", 4, 4, 1, 7);
    let wlen = ps.data(block.weight).len();
    let w = randvec(wlen, 8);
    ps.data_mut(block.weight).copy_from_slice(&w);
    for v in ps.data_mut(block.off_bias) {
        *v = 0.3;
    }
    let x = Tensor::from_vec([1, 4, 32, 32, 32], randvec(4 * 32768, 9));

    let mut group = c.benchmark_group("deform_conv3d_fwd_4ch_32c");
    group.sample_size(10);
    for &seq in &[false, true] {
        let name = if seq { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |bch, &seq| {
            set_force_sequential(seq);
            bch.iter(|| block.forward(&ps, &x));
            set_force_sequential(false);
        });
    }
    group.finish();

    let (_, ctx) = block.forward(&ps, &x);
    let gout = Tensor::from_vec([1, 4, 32, 32, 32], randvec(4 * 32768, 10));
    let mut group = c.benchmark_group("deform_conv3d_bwd_4ch_32c");
    group.sample_size(10);
    for &seq in &[false, true] {
        let name = if seq { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |bch, &seq| {
            set_force_sequential(seq);
            bch.iter(|| {
                let mut grads = GradStore::zeros_like(&ps);
                block.backward(&ps, &x, &ctx, &gout, &mut grads)
            });
            set_force_sequential(false);
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv3d, bench_deform_conv);
criterion_main!(benches);
