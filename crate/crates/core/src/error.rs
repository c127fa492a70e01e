use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action `{0}`")]
    InvalidAction(String),

    #[error("domain contract violated: {0}")]
    DomainContract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("hierarchy construction error: {0}")]
    Construction(String),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("grounding error: {0}")]
    Grounding(String),

    #[error("abstraction error: {0}")]
    Abstraction(String),

    #[error("dead end: no available actions in `{0}`")]
    DeadEnd(String),

    #[error("model load error: {0}")]
    ModelLoad(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("oracle refused: {0}")]
    Oracle(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("missing file `{path}`: {source}")]
    MissingFile {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for missing files, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Construction(_) | Error::Grounding(_) => 2,
            Error::MissingFile { .. } => 3,
            _ => 4,
        }
    }

    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}
