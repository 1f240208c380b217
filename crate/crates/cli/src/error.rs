use std::path::PathBuf;

use thiserror::Error;

use pid_core::oracle::OracleError;
use pid_core::{DiagramError, TransformError, Violation};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("diagram is not regular: {}", describe(.0))]
    NotRegular(Vec<Violation>),
    #[error("the evidence has probability zero")]
    ZeroProbabilityEvidence,
    #[error("no node named `{0}`")]
    UnknownName(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Transform(TransformError),
    #[error(transparent)]
    Oracle(OracleError),
}

fn describe(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join("; ")
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotRegular(_) => 2,
            CliError::ZeroProbabilityEvidence => 3,
            CliError::Parse(_) => 4,
            _ => 1,
        }
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::ZeroProbabilityEvidence => CliError::ZeroProbabilityEvidence,
            TransformError::NotRegular(v) => CliError::NotRegular(v),
            TransformError::Diagram(DiagramError::UnknownName(n)) => CliError::UnknownName(n),
            other => CliError::Transform(other),
        }
    }
}

impl From<DiagramError> for CliError {
    fn from(e: DiagramError) -> Self {
        TransformError::from(e).into()
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::ZeroProbabilityEvidence => CliError::ZeroProbabilityEvidence,
            other => CliError::Oracle(other),
        }
    }
}
