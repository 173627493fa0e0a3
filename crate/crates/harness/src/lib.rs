//! Experiment runner for value gradient flow.
//!
//! Configs are TOML files or named presets with `--set a.b=v` overrides on
//! top. Every output file carries the hash of the fully resolved config,
//! and each run directory gets a `run.json` describing what produced it.
//!
//! ```no_run
//! use vgf_harness::{config::ExperimentConfig, run};
//!
//! let cfg = ExperimentConfig::resolve(Some("bandit"), None, &["seeds=[0]".into()])?;
//! let record = run::train(&cfg, &cfg.output_dir())?;
//! println!("{}", record.describe());
//! # Ok::<(), vgf_harness::HarnessError>(())
//! ```

#[cfg(doctest)]
mod book;
pub mod config;
pub mod error;
pub mod plot;
pub mod record;
pub mod run;

pub use config::{ExperimentConfig, Task, TrainCell};
pub use error::{exit, HarnessError, Result};
pub use record::RunRecord;
