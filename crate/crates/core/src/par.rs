//! Data-parallel helpers with a sequential fallback.
//!
//! [`map_range`] is the entry point the rest of the crate uses. With the
//! `parallel` feature it distributes indices over the rayon pool, otherwise
//! it runs a plain loop. Both paths return results in index order, so
//! callers see identical output either way.

/// Sequential map over `0..n`, results in index order.
pub fn map_range_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Parallel map over `0..n`, results in index order.
#[cfg(feature = "parallel")]
pub fn map_range_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map over `0..n` using the configured backend.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_range_par(n, f)
}

/// Map over `0..n` using the configured backend.
#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_range_seq(n, f)
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
