//! Experiment orchestration: configuration, preset pipelines, artifacts and reports.

mod config;
mod dump;
mod output;
mod presets;

pub use config::*;
pub use dump::{dump_geometry, dump_operator};
pub use output::*;
pub use presets::{linearized_lambda, run_preset, trapped_decay};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DAMPLAB_THREADS";

/// Size the global worker pool from `DAMPLAB_THREADS` when it is set.
pub fn configure_threads() -> crate::Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(None) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::Error::InvalidParameter(format!("{THREADS_ENV} = {raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
    Ok(Some(n))
}
