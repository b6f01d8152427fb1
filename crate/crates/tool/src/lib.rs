//! Model files, corpus readers and subcommands behind the `lrinfer` binary.

pub mod commands;
pub mod corpus;
pub mod modelfile;

use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or invalid model file.
    Model,
    /// Malformed corpus.
    Corpus,
    /// Corpus does not fit the model's dimensions.
    Dimension,
    /// Anything else: I/O, bad flag values, inference failures.
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Model => 1,
            ErrorKind::Corpus => 2,
            ErrorKind::Dimension => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn model(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Model, message)
    }

    pub fn corpus(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Corpus, message)
    }

    pub fn dimension(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Dimension, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Runtime, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<lrinfer_core::Error> for CliError {
    fn from(e: lrinfer_core::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
