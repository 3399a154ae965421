//! Data-parallel loop helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled (the default) these run on the
//! rayon pool; without it they degrade to plain loops. Work is always
//! partitioned by fixed chunk sizes derived from the data, never from
//! the thread count, and reductions combine per-chunk partials in chunk
//! order, so every helper produces bit-identical results sequentially,
//! in parallel, and for any pool size.
//!
//! [`set_force_sequential`] lets benchmarks compare both paths in one
//! binary.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime even when the `parallel`
/// feature is compiled in.
pub fn set_force_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::SeqCst);
}

/// True when work will actually be dispatched to the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Fixed element count per reduction chunk. Constant so that partial-sum
/// boundaries never depend on input length or thread count.
const REDUCE_CHUNK: usize = 1 << 14;

/// Apply `f(chunk_index, chunk)` over disjoint mutable chunks of `chunk`
/// elements (the last chunk may be shorter).
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Apply `f(chunk_index, chunk)` over disjoint mutable chunks,
/// collecting one result per chunk in chunk order.
pub fn map_chunks_mut<T, R, F>(data: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return data
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    data.chunks_mut(chunk)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Deterministic sum of `f(i)` for i in `0..n`, accumulated in f64.
/// Partials are computed per fixed-size chunk and combined in order.
pub fn sum_indexed_f64<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunk_sums: Vec<f64> = {
        let n_chunks = n.div_ceil(REDUCE_CHUNK).max(1);
        map_indexed(n_chunks, |c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        })
    };
    chunk_sums.iter().sum()
}

/// Deterministic f64 sum of a slice of f32 values.
pub fn sum_f32_as_f64(data: &[f32]) -> f64 {
    sum_indexed_f64(data.len(), |i| data[i] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_reference() {
        let data: Vec<f32> = (0..100_000).map(|i| (i as f32).sin()).collect();
        let par = sum_f32_as_f64(&data);
        set_force_sequential(true);
        let seq = sum_f32_as_f64(&data);
        set_force_sequential(false);
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn chunked_mutation_covers_all_elements() {
        let mut data = vec![0usize; 1000];
        for_each_chunk_mut(&mut data, 37, |ci, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = ci * 37 + j;
            }
        });
        for (i, v) in data.iter().enumerate() {
            assert_eq!(*v, i);
        }
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(257, |i| i * 2);
        assert_eq!(v[0], 0);
        assert_eq!(v[256], 512);
    }
}
