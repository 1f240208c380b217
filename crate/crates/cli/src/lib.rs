//! Library side of the `pidiag` tool: the diagram file format and the
//! subcommand implementations.

pub mod commands;
pub mod document;
pub mod error;

pub use commands::{Outcome, RunReport};
pub use document::DiagramDocument;
pub use error::CliError;
