//! Data-parallel helpers. With the `parallel` feature disabled every helper
//! degrades to a sequential loop with identical results.

/// Maps `f` over `0..n`, preserving index order in the output.
///
/// `workers == 0` uses the ambient rayon pool, `1` runs on the calling
/// thread, and larger values run on a dedicated pool of that many threads.
pub(crate) fn map_range<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if n > 1 {
            if workers == 0 {
                return (0..n).into_par_iter().map(&f).collect();
            }
            if workers > 1 {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    return pool.install(|| (0..n).into_par_iter().map(&f).collect());
                }
            }
        }
    }
    let _ = workers;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        for workers in [0, 1, 2, 7] {
            let v = map_range(100, workers, |i| i * i);
            assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
