use thiserror::Error;

/// Errors surfaced by the library. Variants are tagged with the subsystem that raised them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("data: {0}")]
    Data(String),

    #[error("data: line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("binning: {0}")]
    Binning(String),

    #[error("polyfit: {0}")]
    Fit(String),

    #[error("spn: {0}")]
    Spn(String),

    #[error("spn: evidence refers to unknown group {0}")]
    UnknownGroup(usize),

    #[error("conditional is undefined: evidence has zero probability")]
    UndefinedConditional,

    #[error("query: {message} (at position {position})")]
    QuerySyntax { message: String, position: usize },

    #[error("query: {0}")]
    Query(String),

    #[error("wmi: {0}")]
    Wmi(String),

    #[error("model: {0}")]
    Model(String),

    #[error("model: unsupported format version {found} (this build reads version {supported})")]
    ModelVersion { found: u32, supported: u32 },

    #[error("bench: {0}")]
    Bench(String),
}

pub type Result<T> = std::result::Result<T, Error>;
