//! Configuration-driven experiment runner for `kdvb-core`.
//!
//! A run reads one JSON configuration, checks every block, computes the
//! named experiment and writes its CSV/JSON artifacts together with a
//! `manifest.json` into the configured output directory.

pub mod config;
pub mod experiments;
pub mod output;
pub mod regime;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig, LoadedConfig};
pub use output::{Artifacts, FileDigest, Manifest};
pub use regime::{validate, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    /// The configuration is malformed or violates a precondition.
    #[error("configuration error: {0}")]
    Schema(String),
    /// A numerical guard tripped during the run.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<kdvb_core::Error> for CliError {
    fn from(e: kdvb_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Schema(e.to_string())
        }
    }
}

/// Computes the experiment without touching the file system.
pub fn execute(loaded: &LoadedConfig) -> Result<Artifacts, CliError> {
    let job = experiments::prepare(loaded)?;
    let mut out = Artifacts::new();
    job.run(&mut out)?;
    Ok(out)
}

/// Outcome of [`run`].
#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<FileDigest>,
    pub wall_time_s: f64,
}

/// Executes the experiment and writes the artifacts and manifest into
/// `output_dir`, or into the configured directory when `None`.
pub fn run(loaded: &LoadedConfig, output_dir: Option<&Path>) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let artifacts = execute(loaded)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let dir = output_dir.unwrap_or(&loaded.config.output_dir).to_path_buf();
    artifacts.write_all(&dir)?;
    let files = artifacts.digests();
    let manifest = Manifest {
        experiment: loaded.config.experiment.name(),
        seed: loaded.config.seed,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s,
        threads: rayon::current_num_threads(),
        files: files.clone(),
        config: &loaded.source,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("serialisable manifest");
    text.push('\n');
    let path = dir.join(output::MANIFEST);
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(RunSummary {
        output_dir: dir,
        files,
        wall_time_s,
    })
}

/// Caps the global thread pool from `KDVB_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("KDVB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Schema(format!("KDVB_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Schema(format!("KDVB_THREADS: {e}")))
}
