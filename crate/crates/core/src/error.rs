use thiserror::Error;

use crate::model::CellRef;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot resolve selector token `{token}`: {reason}")]
    Selector { token: String, reason: String },

    #[error("job `{0}` has an empty cell set")]
    EmptyCells(String),

    #[error("job `{0}` names no detectors, repairers or validators")]
    EmptyJob(String),

    #[error("unknown agent `{id}` ({context})")]
    UnknownAgent { id: String, context: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expertise of `{human}` is undefined: no validated {task} entries on the requested cells")]
    UndefinedExpertise { human: String, task: String },

    #[error("no budget-feasible cover: {} cell(s) cannot be covered", uncovered.len())]
    Infeasible { uncovered: Vec<CellRef> },

    #[error("pool of {size} humans exceeds the exhaustive-search limit of {limit}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("cannot route interaction `{0}`")]
    Routing(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("ledger already holds an entry for {cell} at generation {generation}")]
    LedgerConflict { cell: CellRef, generation: u64 },

    #[error("no ledger entry for {cell} at generation {generation}")]
    MissingEntry { cell: CellRef, generation: u64 },

    #[error("line {line}: {message}")]
    Ingest { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("restore failed: {0}")]
    Restore(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("response kind `{got}` does not match task kind `{expected}`")]
    KindMismatch { expected: String, got: String },

    #[error("task `{0}` is already closed")]
    TaskClosed(String),

    #[error("cell {0} is outside the task scope")]
    OutOfScope(CellRef),

    #[error("job `{0}` has already been run")]
    AlreadyRun(String),

    #[error("duplicate identifier `{0}`")]
    Duplicate(String),

    #[error("agent `{agent}` failed: {message}")]
    Agent { agent: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Stable, machine-parsable error code used on the wire and by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Selector { .. } => "selector-resolution",
            Error::EmptyCells(_) => "empty-cells",
            Error::EmptyJob(_) => "empty-job",
            Error::UnknownAgent { .. } => "unknown-agent",
            Error::Config(_) => "config",
            Error::UndefinedExpertise { .. } => "undefined-expertise",
            Error::Infeasible { .. } => "infeasible",
            Error::OracleTooLarge { .. } => "oracle-size",
            Error::Routing(_) => "routing",
            Error::Planning(_) => "planning",
            Error::LedgerConflict { .. } => "ledger-conflict",
            Error::MissingEntry { .. } => "missing-entry",
            Error::Ingest { .. } => "ingestion",
            Error::Schema(_) => "schema",
            Error::Restore(_) => "restore",
            Error::NotFound(_) => "not-found",
            Error::KindMismatch { .. } => "kind-mismatch",
            Error::TaskClosed(_) => "task-closed",
            Error::OutOfScope(_) => "out-of-scope",
            Error::AlreadyRun(_) => "already-run",
            Error::Duplicate(_) => "duplicate",
            Error::Agent { .. } => "agent-failure",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::TomlDe(_) | Error::TomlSer(_) => "toml",
        }
    }
}
