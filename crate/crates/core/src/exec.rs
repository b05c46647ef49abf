//! Per-client data parallelism.
//!
//! Client work within a round goes through [`map_clients`]. With the
//! `parallel` feature and [`Execution::Parallel`] it fans out over rayon;
//! otherwise it runs in order on the calling thread. Results come back in
//! client order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

pub(crate) fn map_clients<T, U, F>(items: &mut [T], execution: Execution, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(&mut T) -> U + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter_mut().map(f).collect(),
        _ => items.iter_mut().map(f).collect(),
    }
}

/// Runs `f` with at most `workers` threads available to client work.
/// `None` keeps the global default (one thread per core).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build worker pool")
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}
