//! Data parallelism over images.
//!
//! Workers map independent items (one tape each); results are collected
//! in input order and reduced sequentially, so the outcome is
//! bit-identical whether the map ran on one thread or many. `CAC_THREADS`
//! caps the worker count (default 1 = sequential). Without the `parallel`
//! feature only the sequential path exists.

use once_cell::sync::Lazy;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Worker cap from `CAC_THREADS`; unset, empty or unparsable means 1.
pub fn configured_threads() -> usize {
    static THREADS: Lazy<usize> = Lazy::new(|| {
        std::env::var("CAC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    });
    *THREADS
}

#[cfg(feature = "parallel")]
static POOL: Lazy<Option<rayon::ThreadPool>> = Lazy::new(|| {
    let threads = configured_threads();
    if threads <= 1 {
        return None;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .ok()
});

/// Sequential reference path; always available.
pub fn map_ordered_seq<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Parallel map preserving input order, on the ambient rayon pool.
#[cfg(feature = "parallel")]
pub fn map_ordered_par<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, in parallel when the feature is enabled and
/// `CAC_THREADS` allows more than one worker.
pub fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        if items.len() > 1 {
            if let Some(pool) = POOL.as_ref() {
                return pool.install(|| map_ordered_par(items, &f));
            }
        }
    }
    map_ordered_seq(items, f)
}
