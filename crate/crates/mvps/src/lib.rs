//! File formats and the command line around `mvps-core`.
//!
//! The binary `mvps` runs the jobs `synth`, `train`, `eval` and `oracle`;
//! each output is determined by the configuration and the input files.
//! The binary `mvps-scorer` serves the surrogate over the external-scorer
//! protocol.

mod binio;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod embfile;
pub mod error;
pub mod external;
pub mod report;

pub use mvps_core as core;

pub use checkpoint::Checkpoint;
pub use commands::{cmd_eval, cmd_oracle, cmd_synth, cmd_train, make_scorer, Layout};
pub use config::RunConfig;
pub use error::{CliError, FormatError, ScorerError};
