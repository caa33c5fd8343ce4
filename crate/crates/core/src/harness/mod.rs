//! Experiment drivers: configuration schemas, threshold scans and fits.
//!
//! Parallel work runs on a rayon pool whose size is read from the
//! `COUETTE_LAB_WORKERS` environment variable (all cores when unset).

pub mod drivers;
pub mod fit;
pub mod scan;

use crate::error::{LabError, Result};

pub const WORKERS_ENV: &str = "COUETTE_LAB_WORKERS";

/// Worker count from [`WORKERS_ENV`], or `None` for the rayon default.
pub fn configured_workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(LabError::Config(format!("{WORKERS_ENV} = {v:?} is not a positive integer"))),
        },
    }
}

/// Run `f` inside a pool sized by [`WORKERS_ENV`].
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = configured_workers()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| LabError::Numerical(e.to_string()))?;
    Ok(pool.install(f))
}
