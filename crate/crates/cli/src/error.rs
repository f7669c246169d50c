use std::path::Path;

/// Process exit codes.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] iflow_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(iflow_core::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn exit_code(&self) -> u8 {
        use iflow_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                E::Domain(_) | E::Argument(_) | E::Unsupported(_) | E::Incompatible(_) => EXIT_CONFIG,
                E::Numeric(_) => EXIT_NUMERIC,
                E::Corrupt { .. } | E::UnsupportedVersion { .. } | E::Io { .. } => EXIT_IO,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
