//! Row-parallel execution with a fixed reduction order.
//!
//! Work is split by output row only. Each row is computed by exactly the
//! same sequential loop regardless of the thread count, so results are
//! bit-identical between the parallel and sequential paths.

use std::sync::OnceLock;

use rayon::prelude::*;

/// Below this many scalar operations a kernel stays on the calling thread.
const PAR_MIN_WORK: usize = 1 << 15;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "LSTA_THREADS";

static POOL_INIT: OnceLock<usize> = OnceLock::new();

/// Configures the global worker pool from `LSTA_THREADS` (or all cores).
/// Only the first call has an effect; returns the thread count in use.
pub fn init_from_env() -> usize {
    *POOL_INIT.get_or_init(|| {
        let requested = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = requested {
            builder = builder.num_threads(n);
        }
        // A pool may already exist if rayon was used before; that is fine.
        let _ = builder.build_global();
        rayon::current_num_threads()
    })
}

/// Runs `f` with internal parallelism disabled.
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Calls `f(row_index, row)` for every `row_len`-sized chunk of `out`.
pub(crate) fn for_each_row<T, F>(out: &mut [T], row_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    if work >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}
