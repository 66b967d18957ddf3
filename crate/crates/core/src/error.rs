use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: String, message: String },

    #[error("empty data: {0}")]
    Empty(String),

    #[error("category index {index} out of range for `{covariate}` (table has {rows} rows)")]
    CategoryOutOfRange {
        covariate: String,
        index: usize,
        rows: usize,
    },

    /// A draw of the noise scale was exactly zero; the caller should resample.
    #[error("degenerate noise scale draw (sigma = 0)")]
    DegenerateScale,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("malformed model document: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than numerics or I/O.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::MissingColumn(_)
                | Error::MissingField(_)
                | Error::Parse { .. }
                | Error::InvalidValue { .. }
                | Error::Empty(_)
                | Error::CategoryOutOfRange { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Malformed(_)
                | Error::Version { .. }
                | Error::Io { .. }
        )
    }
}
