//! Config-driven experiment driver: environment generation, demo sampling,
//! training sweeps, and evaluation with CSV/JSON outputs.

pub mod config;
pub mod pipeline;

pub use config::{Algorithm, DemoConfig, EnvConfig, EvalConfig, ExperimentConfig, WairlBlock};
pub use pipeline::{cmd_all, cmd_eval, cmd_gen, cmd_train, ModelArtifact, SweepStatus};
