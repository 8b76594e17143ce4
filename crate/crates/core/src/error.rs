use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("dangling FK {from_table}.{from_column} -> {to_table}.{to_column}: {reason}")]
    DanglingForeignKey {
        from_table: String,
        from_column: String,
        to_table: String,
        to_column: String,
        reason: String,
    },

    #[error("functional dependency {table}.{determinant} -> {table}.{dependent}: column not found")]
    FdColumnNotFound {
        table: String,
        determinant: String,
        dependent: String,
    },

    #[error("csv error in {table}: {message}")]
    Csv { table: String, message: String },

    #[error("parse error in {table} at row {row}, column {column}: cannot parse {value:?} as {kind}")]
    TypeParse {
        table: String,
        row: usize,
        column: String,
        value: String,
        kind: &'static str,
    },

    #[error("duplicate primary key {value} in {table}.{column}")]
    DuplicatePrimaryKey {
        table: String,
        column: String,
        value: String,
    },

    #[error("referential integrity violated: {table}.{column} = {value} has no match in {referenced}")]
    ReferentialIntegrity {
        table: String,
        column: String,
        value: String,
        referenced: String,
    },

    #[error("table set is not connected in the FK graph: {0:?}")]
    Disconnected(Vec<String>),

    #[error("invalid table set: {0}")]
    InvalidTableSet(String),

    #[error("join size overflow while materializing {0:?}")]
    JoinOverflow(Vec<String>),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("column {column} is not in the scope of model {model}")]
    NotInScope { column: String, model: String },

    #[error("empty condition: the predicate has zero probability")]
    EmptyCondition,

    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown table {0}")]
    UnknownTable(String),

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),

    #[error("query cannot be covered by the ensemble: {0}")]
    Uncoverable(String),

    #[error("update rejected: {0}")]
    Update(String),

    #[error("model file error: {0}")]
    Persistence(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Syntax { .. }
            | Error::Unsupported(_)
            | Error::UnknownTable(_)
            | Error::UnknownColumn(_)
            | Error::AmbiguousColumn(_) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }
}
