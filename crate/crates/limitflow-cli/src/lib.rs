//! Config-driven runner for the limitflow experiments: typed run configs,
//! an experiment registry, JSON verdicts, CSV tables and a run manifest.

pub mod config;
pub mod output;
pub mod registry;
pub mod runner;

use limitflow_core::CoreError;

pub use config::RunConfig;
pub use runner::{run, run_one, Outcome, Report, RunManifest};

pub const WORKERS_ENV: &str = "LIMITFLOW_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown experiment `{id}`; did you mean `{hint}`?")]
    UnknownExperiment { id: String, hint: String },
    #[error("resource cap: {0}")]
    ResourceCap(String),
    #[error("invalid run parameters: {0}")]
    Model(CoreError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    /// 2 for configuration and parameter errors, 3 for resource caps.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ResourceCap(_) => 3,
            _ => 2,
        }
    }
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ResourceCap(msg) => RunError::ResourceCap(msg),
            other => RunError::Model(other),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Sizes the global worker pool from `LIMITFLOW_WORKERS`, when set.
pub fn configure_workers(value: Option<&str>) -> Result<Option<usize>, RunError> {
    let Some(raw) = value else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| RunError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| RunError::Config(e.to_string()))?;
    Ok(Some(n))
}
