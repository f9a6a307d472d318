use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("malformed CSV at line {line}, byte {byte}: {message}")]
    MalformedCsv { line: u64, byte: u64, message: String },
    #[error("a chart encodes 1 to 4 columns, got {0}")]
    Cardinality(usize),
    #[error("column index {index} out of range for a table with {len} columns")]
    Index { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("feature layout mismatch: expected version {expected}, found {found}")]
    Layout { expected: u32, found: u32 },
    #[error("corrupt model bundle: {0}")]
    Corrupt(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("provenance log has fewer than two distinct MV snapshots")]
    InsufficientHistory,
    #[error("chart position {position} out of range for an MV of {len} charts")]
    Position { position: usize, len: usize },
    #[error("MV has no charts")]
    EmptyMv,
    #[error("MV has {0} charts; at most 12 are supported")]
    TooManyCharts(usize),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("unknown version {0}")]
    UnknownVersion(u64),
    #[error("session is closed")]
    SessionClosed,
    #[error("user has not consented to storing this session")]
    ConsentDenied,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
