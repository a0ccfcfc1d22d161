use hbem::BemError;
use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("output error: {0}")]
    Output(String),

    #[error(transparent)]
    Engine(#[from] BemError),

    #[error("benchmark probe failed for {0}")]
    Probe(String),
}

impl CliError {
    /// 2 for anything the user can fix in the configuration or inputs,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output(_) => EXIT_CONFIG,
            CliError::Engine(e) => match e {
                BemError::Parse { .. }
                | BemError::EmptyMesh
                | BemError::Io(_)
                | BemError::InvalidMesh(_)
                | BemError::InvalidArgument(_)
                | BemError::Unsupported(_)
                | BemError::Capacity(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
            CliError::Probe(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
