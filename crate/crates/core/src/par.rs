//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan out over rayon; without it (or
//! after `set_parallel(false)`) they run the same closures sequentially. Work
//! is always split into the same fixed chunks, so results are bit-identical
//! between the two paths and independent of the thread count.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
static ENABLED: AtomicBool = AtomicBool::new(true);

/// Toggle the parallel path at runtime. No-op without the `parallel` feature.
pub fn set_parallel(on: bool) {
    #[cfg(feature = "parallel")]
    ENABLED.store(on, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = on;
}

/// Size the global worker pool; `1` selects the sequential path outright.
/// Only the first call can size the pool, later ones just toggle the path.
pub fn configure_threads(n: usize) {
    set_parallel(n != 1);
    #[cfg(feature = "parallel")]
    if n > 1 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn is_parallel() -> bool {
    #[cfg(feature = "parallel")]
    {
        ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Run `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Evaluate `f(i)` for `i in 0..n`, collecting in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
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
