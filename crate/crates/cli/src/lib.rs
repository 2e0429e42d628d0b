//! Library half of the `maps` command-line tool: config files, binary
//! dataset/checkpoint formats, and CSV/SVG report writers. The binary in
//! `main.rs` is a thin clap wrapper over [`commands`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod demo_file;
pub mod report;

use std::fmt;

/// CLI-level failure. Every variant renders as one line of the form
/// `error[<category>]: <message>` so scripts can match on the category
/// without parsing free text.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration (TOML parse errors, unknown keys,
    /// invalid hyperparameters).
    Config(String),
    /// Malformed input file: wrong magic, truncated payload, kind or
    /// config mismatch on a checkpoint.
    Format(String),
    /// Underlying I/O failure, with the offending path.
    Io(String),
    /// Invalid command-line usage that clap cannot catch (for example a
    /// checkpoint of the wrong kind for the subcommand).
    Usage(String),
    /// Training or evaluation failed inside the core library.
    Run(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Format(_) => "format",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Run(_) => "run",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Format(m)
            | CliError::Io(m)
            | CliError::Usage(m)
            | CliError::Run(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // One line, no trailing period: `error[io]: cannot open demos.bin`.
        write!(f, "error[{}]: {}", self.category(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<maps_core::error::Error> for CliError {
    fn from(e: maps_core::error::Error) -> Self {
        match e {
            maps_core::error::Error::InvalidConfig(_) => CliError::Config(e.to_string()),
            maps_core::error::Error::InvalidData(_) => CliError::Format(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Wrap an I/O error with the path it concerned.
pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {}", path.display(), e))
}
