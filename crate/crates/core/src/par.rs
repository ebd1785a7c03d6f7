//! Deterministic parallel reductions.
//!
//! Work is split into chunks whose boundaries depend only on the input
//! length, each chunk is folded sequentially, and the per-chunk results are
//! combined left to right. The worker count therefore never changes a result.

use rayon::prelude::*;

pub(crate) const DEFAULT_CHUNK: usize = 256;

pub(crate) fn map_reduce<T, A, M, R>(items: &[T], chunk: usize, map: M, reduce: R) -> Option<A>
where
    T: Sync,
    A: Send,
    M: Fn(&[T]) -> A + Sync + Send,
    R: Fn(A, A) -> A,
{
    let parts: Vec<A> = items.par_chunks(chunk.max(1)).map(map).collect();
    parts.into_iter().reduce(reduce)
}

/// Ordered parallel map.
pub(crate) fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}
