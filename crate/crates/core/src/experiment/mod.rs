//! Experiment configuration and the artifact-producing pipeline behind the
//! command-line front end.

pub mod artifacts;
pub mod config;
pub mod pipeline;

pub use config::{AblationToggles, ExperimentConfig, StepOverride, UniverseSource, SCHEMA};
