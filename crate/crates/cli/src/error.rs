use kfp_core::KfpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => crate::EXIT_CONFIG,
            CliError::Solver(_) => crate::EXIT_INCONCLUSIVE,
        }
    }
}

impl From<KfpError> for CliError {
    fn from(e: KfpError) -> Self {
        match e {
            KfpError::Solver(_) | KfpError::NonFinite { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
