use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("{rejected} of {total} rows rejected")]
    TooManyRejects { rejected: usize, total: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("record from `{source_id}` at {timestamp} is outside the dataset span")]
    TimestampOutOfSpan { source_id: String, timestamp: i64 },
    #[error("records of `{0}` are not sorted by timestamp")]
    Unsorted(String),
    #[error("expected {expected} attributes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("expected {expected} inputs, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch belongs to `{batch}`, ensemble to `{ensemble}`")]
    WrongSource { batch: String, ensemble: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum ConsistencyError {
    #[error("consistency needs at least two sources")]
    SingleSource,
    #[error("source index {0} out of range")]
    UnknownSource(usize),
    #[error("no samples to fit")]
    NoSamples,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("need at least two snapshots, got {0}")]
    InsufficientData(usize),
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("selection contains no records")]
    EmptySelection,
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("invalid range {start}..={end} for `{source_id}`")]
    InvalidRange { source_id: String, start: usize, end: usize },
    #[error("overlapping ranges for `{0}`")]
    OverlappingRanges(String),
    #[error("schemas differ")]
    SchemaMismatch,
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("unknown concept id {0}")]
    UnknownConcept(u64),
    #[error("concept store: {0}")]
    StorageFailure(String),
}
