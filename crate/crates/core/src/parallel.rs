//! Worker-count control for the data-parallel estimators.

use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `workers` threads; `0` uses the global
/// pool. Results of the crate's estimators do not depend on this choice.
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
