//! Experiment presets, artifact writing, summaries and the verification
//! suites behind the `asynclqr` command line.

pub mod config;
pub mod experiment;
pub mod summary;
pub mod verify;

pub use config::{preset_runs, ExperimentConfig, ModeKind, NominalSource, Overrides, Preset, Scheduler};
pub use experiment::{run_experiment, run_preset, RunArtifacts, RunMetadata};
pub use summary::{summarize, summarize_dir, Report, DEFAULT_THRESHOLD};
pub use verify::{run_suite, CriterionResult, Suite};
