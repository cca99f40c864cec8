use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ddgcn::Error> for CliError {
    fn from(e: ddgcn::Error) -> Self {
        use ddgcn::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Topology(_) | E::SubsetOutOfRange { .. } => CliError::Config(msg),
            E::Data(_) | E::Checkpoint(_) | E::Io(_) | E::Json(_) => CliError::Data(msg),
            E::Shape { .. } | E::NonFinite { .. } => CliError::Numeric(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
