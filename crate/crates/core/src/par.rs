//! Order-preserving parallel map bounded by a job count.

use rayon::prelude::*;

/// Applies `f` to every item with at most `jobs` threads (0 = one per core,
/// 1 = the calling thread only). Results keep the input order; the first
/// error in input order is returned.
pub(crate) fn map<T, R, E, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    if jobs == 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool with a positive or default thread count");
    let results: Vec<Result<R, E>> = pool.install(|| items.par_iter().map(f).collect());
    results.into_iter().collect()
}
