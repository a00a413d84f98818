//! Deterministic data-parallel helpers.
//!
//! Work is cut into fixed-size chunks that do not depend on the thread count.
//! Each chunk folds sequentially and partial results are combined in chunk
//! order, so a reduction returns the same bits whether it ran on one thread,
//! many threads, or with the `parallel` feature disabled.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Folds `0..len` in chunks of `chunk` items and combines the partials in order.
pub fn chunked_fold<A, M, F, C>(len: usize, chunk: usize, make: M, fold: F, combine: C) -> A
where
    A: Send,
    M: Fn() -> A + Sync + Send,
    F: Fn(&mut A, Range<usize>) + Sync + Send,
    C: Fn(&mut A, A),
{
    let ranges = chunk_ranges(len, chunk);
    let run = |r: &Range<usize>| {
        let mut acc = make();
        fold(&mut acc, r.clone());
        acc
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<A> = ranges.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<A> = ranges.iter().map(run).collect();

    let mut total = make();
    for p in partials {
        combine(&mut total, p);
    }
    total
}

/// Sums `len` vectors of length `width` produced chunk by chunk.
pub fn chunked_vec_sum<F>(len: usize, chunk: usize, width: usize, fold: F) -> Vec<f64>
where
    F: Fn(&mut [f64], Range<usize>) + Sync + Send,
{
    chunked_fold(
        len,
        chunk,
        || vec![0.0; width],
        |acc, r| fold(acc, r),
        |tot, part| {
            for (t, p) in tot.iter_mut().zip(part) {
                *t += p;
            }
        },
    )
}

/// Order-preserving map over `0..n`.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
