//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] dispatches to
//! rayon; without it, both variants run sequentially. Every helper preserves
//! input order, so callers that reduce the collected output sequentially get
//! results independent of thread scheduling.

/// How batch operations distribute per-item work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if is_parallel_available() {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub fn is_parallel_available() -> bool {
    cfg!(feature = "parallel")
}

impl Execution {
    /// Order-preserving map over a slice.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..count`.
    pub fn map_indexed<U, F>(self, count: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..count).into_par_iter().map(f).collect()
            }
            _ => (0..count).map(f).collect(),
        }
    }
}
