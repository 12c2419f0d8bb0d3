//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these run on the ambient rayon
//! pool; the `XGEN_THREADS` environment variable caps the global pool size
//! (unset or 0 means the rayon default), and callers may `install` their own
//! pool. Without the feature they are plain loops. Every helper preserves
//! output order and only splits disjoint work, so results never depend on
//! the thread count.

#[cfg(feature = "parallel")]
fn ensure_pool() {
    use std::sync::Once;
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        let threads = std::env::var("XGEN_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .unwrap_or(0);
        if threads > 0 {
            // May fail if the global pool is already live; the cap is then
            // whatever was configured first, which is still deterministic.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    });
}

/// Number of worker threads the helpers will use in the current scope.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        ensure_pool();
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Apply `f(chunk_index, chunk)` to consecutive chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ensure_pool();
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }
}

/// Collect `f(0)..f(n-1)` in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ensure_pool();
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_fill_is_order_preserving() {
        let mut out = vec![0usize; 10];
        for_each_chunk_mut(&mut out, 3, |ci, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = ci * 3 + j;
            }
        });
        assert_eq!(out, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn map_indexed_preserves_order() {
        assert_eq!(map_indexed(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
