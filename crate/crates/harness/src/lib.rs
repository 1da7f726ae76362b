//! Experiment harness for multi-device arbitration: dataset generation,
//! self-supervised pretraining, finetuning sweeps over nested subsets, and
//! reporting.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod storage;
pub mod sweep;
pub mod train;

pub use config::{ExperimentConfig, Setup, TrainConfig};
pub use error::{Error, Result};
pub use sweep::Experiment;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "ARBITER_WORKERS";

/// Runs `f` on a thread pool sized by [`WORKERS_ENV`] (all cores when unset).
/// Results never depend on the worker count.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(pool.install(f))
}
