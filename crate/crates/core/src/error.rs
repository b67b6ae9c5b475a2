use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in frame header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("frame has no data rows")]
    EmptyFrame,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("k = {k} exceeds the number of distinct values ({distinct})")]
    KTooLarge { k: usize, distinct: usize },
    #[error("cannot merge an empty group of atomic strata")]
    EmptyGroup,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("label {label} at position {position} is outside [1, {max}]")]
    LabelOutOfRange { position: usize, label: u32, max: usize },
    #[error("target {target} has a zero population total; CV is undefined")]
    ZeroTotal { target: usize },
    #[error("refusing to enumerate partitions of {k} atomic strata (Bell({k}) = {bell})")]
    TooLarge { k: usize, bell: String },
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("allocation does not match stratification: {0}")]
    AllocationMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain `{domain}`: {source}")]
    Domain {
        domain: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn in_domain(self, domain: &str) -> Self {
        Error::Domain {
            domain: domain.to_owned(),
            source: Box::new(self),
        }
    }
}
