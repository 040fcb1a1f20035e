//! Data-parallel helpers.
//!
//! With the `parallel` feature the maps below run on the rayon pool; without it
//! (or after [`force_sequential`]) they run in a plain loop. Every helper returns
//! results in input order, so reductions done by callers stay deterministic.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route all helpers through the sequential path at runtime (benchmarks use this).
pub fn force_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Apply `f` to fixed-size chunks of `items` together with the chunk index.
pub fn for_each_chunk_mut<T, F>(items: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        items.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in items.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Like [`for_each_chunk_mut`], pairing chunk `i` of `items` with `others[i]`.
pub fn for_each_chunk_zip_mut<T, U, F>(items: &mut [T], chunk: usize, others: &mut [U], f: F)
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut [T], &mut U) + Sync + Send,
{
    debug_assert_eq!(items.len(), chunk * others.len());
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        items
            .par_chunks_mut(chunk)
            .zip(others.par_iter_mut())
            .enumerate()
            .for_each(|(i, (c, o))| f(i, c, o));
        return;
    }
    for (i, (c, o)) in items.chunks_mut(chunk).zip(others.iter_mut()).enumerate() {
        f(i, c, o);
    }
}
