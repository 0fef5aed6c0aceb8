//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) the `map_*` functions fan out
//! over rayon's pool; without it they run sequentially. Results always come
//! back in input order, so callers see identical output either way.
//! [`map_indexed_seq`] is always sequential and exists for benchmarks and
//! equivalence tests.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to `0..n` and collects in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// Whether the parallel backend is compiled in.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
