//! Batch driver for kfp-core: configuration, orchestration and result files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_distance, cmd_flow, cmd_grid_study, cmd_verify, Outcome};
pub use config::ExperimentConfig;
pub use error::CliError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
/// `EX_USAGE` from sysexits.
pub const EXIT_CONFIG: i32 = 64;
