//! Thread-pool executor for per-server work.

use hatdfed_core::Executor;
use rayon::prelude::*;

/// Runs per-server work items on the global rayon pool. Results come back
/// in index order, so runs match the sequential executor bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}
