//! Per-path random streams and a worker-count independent parallel map.
//!
//! Every path `i` draws from its own ChaCha8 stream `(seed, i)`, and results
//! are collected in index order, so output never depends on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "RSPEC_WORKERS";

/// Independent stream for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Worker count from the environment, 0 (rayon default) when unset.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

/// Maps `f(i, rng_i)` over `0..n` on a pool of `workers` threads (0 picks
/// the rayon default) and returns the results in index order.
pub fn par_map_paths<R, F>(n: usize, seed: u64, workers: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i as u64);
                f(i, &mut rng)
            })
            .collect()
    }))
}
