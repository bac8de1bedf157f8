use std::io;
use std::path::PathBuf;

/// Failures reading or writing the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("record count mismatch: manifest lists {manifest}, file holds {file}")]
    CountMismatch { manifest: usize, file: usize },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("invalid record: {0}")]
    Record(mvps_core::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl FormatError {
    /// Stable short code for each failure kind.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io { .. } => "io",
            FormatError::BadMagic { .. } => "bad-magic",
            FormatError::Header(_) => "header",
            FormatError::Truncated(_) => "truncated",
            FormatError::Trailing(_) => "trailing",
            FormatError::DimensionMismatch { .. } => "dimension",
            FormatError::CountMismatch { .. } => "count",
            FormatError::DuplicateId(_) => "duplicate-id",
            FormatError::Record(_) => "record",
            FormatError::Manifest(_) => "manifest",
            FormatError::Checkpoint(_) => "checkpoint",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> FormatError {
        let path = path.into();
        move |source| FormatError::Io { path, source }
    }
}

/// Failures talking to an out-of-process scorer.
#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("failed to start scorer `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("scorer pipe: {0}")]
    Pipe(io::Error),
    #[error("scorer exited ({0})")]
    Exited(String),
    #[error("scorer silent for {0} s")]
    Timeout(u64),
    #[error("unparseable scorer reply: {0}")]
    Protocol(String),
    #[error("response count mismatch: {got} masks for {want} queries")]
    CountMismatch { got: usize, want: usize },
}

/// Top-level error of the command line, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] FormatError),
    #[error("{0}")]
    Core(#[from] mvps_core::Error),
    #[error("scorer error: {0}")]
    Scorer(#[from] ScorerError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use mvps_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(E::Insufficient { .. } | E::DuplicateId(_) | E::UnknownLabel(_) | E::UnknownId(_)) => 3,
            CliError::Core(_) | CliError::Scorer(_) | CliError::Runtime(_) => 4,
        }
    }
}
