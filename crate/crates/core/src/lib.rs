//! coreseq: a sequence-to-sequence paraphrase model that fuses a copying
//! decoder with a generative decoder restricted to a small source-specific
//! vocabulary, plus the supporting pipeline: word-alignment training,
//! vocabulary construction, dual-loss optimization, greedy/beam decoding,
//! and an evaluation suite (ROUGE, n-gram perplexity, output statistics).

pub mod alignment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod decoding;
pub mod eval;
pub mod model;
pub mod ndmath;
pub mod synth;
pub mod training;
pub mod vocab;

use thiserror::Error;

/// Crate-wide error. The variants map one-to-one onto the CLI's
/// machine-parseable error categories.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric: {0}")]
    Numeric(#[from] ndmath::NdError),
    #[error("input: {0}")]
    Input(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Single-word category used in CLI error lines and exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Numeric(_) => "numeric",
            Error::Input(_) => "input",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
