use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("sample `{sample_id}`: expected {expected} values in `{field}`, found {found}")]
    ExpertCountMismatch {
        sample_id: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("sample `{sample_id}`: `{field}[{index}]` = {value} is outside [0, 1]")]
    OutOfRange {
        sample_id: String,
        field: &'static str,
        index: usize,
        value: f64,
    },

    #[error("expert `{name}` (index {index}) has cost {cost}, which must be positive and finite")]
    InvalidCost { name: String, index: usize, cost: f64 },

    #[error("experts must be strictly ascending in cost: `{prev}` ({prev_cost}) precedes `{next}` ({next_cost})")]
    CostOrder {
        prev: String,
        prev_cost: f64,
        next: String,
        next_cost: f64,
    },

    #[error("expert `{name}` declares mean_perf {declared} but the samples give {computed}")]
    MeanPerfMismatch {
        name: String,
        declared: f64,
        computed: f64,
    },

    #[error("a cascade needs at least 2 experts, found {0}")]
    TooFewExperts(usize),

    #[error("trace contains no samples")]
    EmptySamples,

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid collection: {0}")]
    InvalidCollection(String),

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

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

    /// True for errors caused by bad input data rather than by the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
