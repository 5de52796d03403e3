//! Execution strategy for the data-parallel loops of the crate.
//!
//! All parallel work is expressed as an ordered map over an index range, so
//! results are collected in index order and any reduction afterwards is
//! sequential. Output is therefore bit-identical between the rayon path and
//! the sequential fallback.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") {
    PARALLEL
} else {
    SEQUENTIAL
});

/// Process-wide default used by [`map_range`]. Without the `parallel`
/// feature `Parallel` silently degrades to sequential execution.
pub fn set_mode(mode: Execution) {
    let v = match mode {
        Execution::Sequential => SEQUENTIAL,
        Execution::Parallel => PARALLEL,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn mode() -> Execution {
    match MODE.load(Ordering::Relaxed) {
        PARALLEL if cfg!(feature = "parallel") => Execution::Parallel,
        _ => Execution::Sequential,
    }
}

/// Runs `f(i)` for `i in 0..n` and returns the results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_range_with(mode(), n, f)
}

pub fn map_range_with<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if n > 1 => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Fallible variant of [`map_range`]; the first error in index order wins.
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}
