//! Error-to-exit-code mapping.

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Exit 1: unreadable inputs, bad flags or malformed configuration.
    pub fn io_config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    /// Exit 2: inputs parsed but do not contain enough data.
    pub fn insufficient(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    /// Exit 3: one or more input files failed validation.
    pub fn per_file(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io_config(e.to_string())
    }
}

/// Reads a file with the path in the error message.
pub fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::io_config(format!("{}: {e}", path.display())))
}
