//! Pipeline orchestration for the `kiln-atlas` binary.
//!
//! Each subcommand validates its config, runs one stage over a worker pool
//! and writes only its declared outputs. Results are merged in tile or
//! image id order, so output bytes do not depend on the worker count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{cmd_detect_lowres, cmd_geolocate, cmd_inventory, cmd_train};
pub use config::{Parameters, Paths, PipelineConfig, Stage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Finished, but some tiles, images or rows failed.
    Partial(Vec<String>),
}

#[derive(Debug)]
pub enum RunError {
    /// Bad config or a missing input; nothing ran.
    Config(anyhow::Error),
    Stage {
        stage: &'static str,
        source: anyhow::Error,
    },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e:#}"),
            RunError::Stage { stage, source } => write!(f, "{stage} failed: {source:#}"),
        }
    }
}

impl std::error::Error for RunError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// 0 on success, 1 when work failed partly or a stage aborted, 2 for
/// configuration errors.
pub fn exit_code(result: &Result<Outcome, RunError>) -> i32 {
    match result {
        Ok(Outcome::Complete) => EXIT_OK,
        Ok(Outcome::Partial(_)) | Err(RunError::Stage { .. }) => EXIT_PARTIAL,
        Err(RunError::Config(_)) => EXIT_CONFIG,
    }
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Config(anyhow::anyhow!("building worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
