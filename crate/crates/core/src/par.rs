//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) the per-image stages fan out over
//! rayon; without it the same code paths run sequentially. Output order is
//! input order in both builds, so results are identical either way.

/// Run `f` inside a worker pool of `jobs` threads. `None` keeps the global
/// pool (machine parallelism). In sequential builds the knob is a no-op.
#[cfg(feature = "parallel")]
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("building a rayon pool")
            .install(f),
        None => f(),
    }
}

/// Sequential fallback: the pool knob has nothing to control.
#[cfg(not(feature = "parallel"))]
pub fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T) -> T {
    let _ = jobs;
    f()
}

/// Map `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub(crate) fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
