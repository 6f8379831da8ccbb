//! Sequential or data-parallel execution of independent work items.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out over
//! rayon. Without it, every mode runs sequentially. Results are collected in
//! input order either way, so callers see identical output for any mode.

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Use the current rayon pool.
    #[default]
    Parallel,
}

impl Execution {
    /// `Sequential` for one worker, `Parallel` otherwise.
    pub fn for_workers(workers: usize) -> Self {
        if workers <= 1 {
            Self::Sequential
        } else {
            Self::Parallel
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }

    /// Maps `f` over `0..len` and collects in index order, short-circuiting on
    /// the first error.
    pub fn try_map_range<T, E, F>(self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Self::Parallel {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Runs `f` inside a rayon pool of `workers` threads (or directly when
    /// sequential).
    pub fn install<R: Send>(workers: usize, f: impl FnOnce(Self) -> R + Send) -> R {
        let exec = Self::for_workers(workers);
        #[cfg(feature = "parallel")]
        if exec == Self::Parallel {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(|| f(exec));
            }
        }
        f(exec)
    }
}
