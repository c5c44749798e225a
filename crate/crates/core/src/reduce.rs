//! Order-deterministic Monte Carlo reduction over paths.
//!
//! Paths are grouped into fixed chunks of [`PATH_CHUNK`]. Each chunk is
//! accumulated sequentially from a fresh accumulator, possibly on any worker,
//! and chunk results are merged strictly in chunk order. The floating point
//! result is therefore identical for any worker count and any batch size;
//! the batch size only bounds how many chunk results are alive at once.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const PATH_CHUNK: usize = 8;
pub const DEFAULT_BATCH_PATHS: usize = 256;

pub fn reduce_paths<A, I, F, G>(
    paths: usize,
    batch_paths: usize,
    init: I,
    per_path: F,
    mut merge: G,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize) -> Result<()> + Sync,
    G: FnMut(&mut A, A),
{
    let chunks = paths.div_ceil(PATH_CHUNK);
    let wave = (batch_paths / PATH_CHUNK).max(1);
    let mut acc = init();
    let mut start = 0;
    while start < chunks {
        let end = (start + wave).min(chunks);
        let partials: Vec<Result<A>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut local = init();
                for j in c * PATH_CHUNK..((c + 1) * PATH_CHUNK).min(paths) {
                    per_path(&mut local, j)?;
                }
                Ok(local)
            })
            .collect();
        for p in partials {
            merge(&mut acc, p?);
        }
        start = end;
    }
    Ok(acc)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
