//! Command implementations behind the `tonal-tts` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod store;
pub mod toy;

pub use commands::{cmd_eval, cmd_finetune, cmd_prepare, cmd_rate, cmd_synth, cmd_train, EvalInputs};
pub use config::{Overrides, RunConfig};
pub use error::CliError;
