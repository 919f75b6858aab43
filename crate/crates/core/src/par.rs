//! Thin wrappers over the data-parallel inner loops.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they fall back to plain sequential iteration so the crate builds with no
//! thread-pool dependency at all. Every helper is order-preserving: results
//! land at the same index regardless of how the work was scheduled, which is
//! what the deterministic render mode relies on.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Map `f` over a slice, collecting results in index order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Unordered reduction of per-index partial results (the fast merge path).
///
/// `make` produces an accumulator per work split, `fold` adds one item,
/// `merge` combines accumulators in an unspecified order.
pub fn fold_reduce<A, F, G, M>(n: usize, make: M, fold: F, merge: G) -> A
where
    A: Send,
    M: Fn() -> A + Sync + Send,
    F: Fn(A, usize) -> A + Sync + Send,
    G: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .fold(&make, &fold)
            .reduce(&make, &merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = &merge;
        (0..n).fold(make(), fold)
    }
}
