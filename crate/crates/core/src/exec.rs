//! Execution strategy for data-parallel loops.
//!
//! Every parallel loop in this crate goes through [`map`] or
//! [`map_indexed`]. With the `parallel` feature (default) the work is
//! spread over the rayon pool; without it the same closure runs
//! sequentially. Results are collected in input order and all
//! reductions downstream happen in that fixed order, so the parallel
//! and sequential paths are bit-identical.
//!
//! [`set_parallel`] is a process-wide runtime switch used by the bench
//! suite and the determinism tests to compare both paths inside one
//! binary. It is a no-op when the feature is disabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon path at runtime.
#[cfg(feature = "parallel")]
pub fn set_parallel(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::SeqCst);
}

#[cfg(not(feature = "parallel"))]
pub fn set_parallel(_enabled: bool) {}

/// True when the next [`map`] call will use rayon.
pub fn parallel_active() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL_ENABLED.load(Ordering::SeqCst)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_active() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_active() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept callable so benches and tests can
/// compare against the parallel path without flipping the global switch.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let doubled = map(&items, |x| x * 2);
        assert_eq!(doubled, (0..1000).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn parallel_matches_sequential() {
        let par = map_indexed(257, |i| (i as f64).sqrt());
        let seq = map_indexed_seq(257, |i| (i as f64).sqrt());
        assert_eq!(par, seq);
    }
}
