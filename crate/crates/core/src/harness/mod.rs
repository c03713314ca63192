//! Run configuration, checkpoints, metrics tables and the experiment drivers
//! behind the command-line tool.

mod checkpoint;
mod config;
pub mod experiments;
mod metrics;

pub use checkpoint::{checkpoint_model, checksum, restore_model, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EnvConfig, EvalConfig, MpcConfig, RunConfig, TrainConfig};
pub use metrics::{schema, Cell, MetricsTable};

/// Worker threads requested through `ADAPOWER_THREADS`, if set and valid.
pub fn thread_cap() -> Option<usize> {
    std::env::var("ADAPOWER_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Configures the global rayon pool from `ADAPOWER_THREADS`. Has no effect
/// once the pool exists.
pub fn init_thread_pool() {
    if let Some(n) = thread_cap() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
