//! Command-line front end: scenario configuration files, truth-pattern
//! generation, artifact I/O, run manifests, and the pipeline subcommands.

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;
pub mod patterns;

pub use commands::{cmd_analyze, cmd_build_operator, cmd_reconstruct, cmd_render, cmd_simulate, CommandError};
pub use config::{load_config, ConfigError, ScenarioConfig};
