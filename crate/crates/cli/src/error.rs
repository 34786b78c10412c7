use std::path::Path;

use handkd_core::codec::FormatError;

/// A failed command. Each variant maps to one process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, what: &str, e: std::io::Error) -> Self {
        CliError::Data(format!("cannot {what} {}: {e}", path.display()))
    }

    pub fn format(path: &Path, e: FormatError) -> Self {
        let hint = match e {
            FormatError::Version { .. } => "; regenerate it with this version of handkd",
            FormatError::BadMagic { .. } => "; check that the right file was passed",
            _ => "; the file is damaged, regenerate it",
        };
        CliError::Data(format!("{}: {e}{hint}", path.display()))
    }
}

impl From<handkd_core::Error> for CliError {
    fn from(e: handkd_core::Error) -> Self {
        use handkd_core::Error as E;
        if e.is_numerical() {
            return CliError::Numerical(format!("{e}; try a smaller --lr"));
        }
        match e {
            E::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
