use std::path::PathBuf;

/// Errors raised by the simulation, measurement and harness layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("truncation level {k_max} exceeds the {n_interior} interior nodes")]
    TruncationTooLarge { k_max: usize, n_interior: usize },

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("regularity order must be nonnegative, got {0}")]
    NegativeOrder(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("noise mode {k} outside 1..={k_trunc}")]
    ModeOutOfRange { k: usize, k_trunc: usize },

    #[error("mode truncation mismatch: path has {path} modes, noise model has {model}")]
    TruncationMismatch { path: usize, model: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "ellipticity breach at step {step}: face coefficient {value} outside [{nu}, {mu}]"
    )]
    Ellipticity {
        step: usize,
        value: f64,
        nu: f64,
        mu: f64,
    },

    #[error("tridiagonal solve failed at row {row} (pivot {pivot}); coefficients are not elliptic")]
    Tridiagonal { row: usize, pivot: f64 },

    #[error("blow-up at step {step}: sup norm {sup} exceeds ceiling {ceiling}")]
    BlowUp { step: usize, sup: f64, ceiling: f64 },

    #[error("only {available} dyadic scales inside the fit window, need at least {required}")]
    InsufficientScales { available: usize, required: usize },

    #[error("field is constant at every probed scale; exponent undefined")]
    DegenerateField,

    #[error("initial profile is not smooth enough: {0}")]
    InsufficientSmoothness(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("refinement ladder is not nested: {0}")]
    NonNestedLadder(String),

    #[error("replica {replica}: {source}")]
    Replica {
        replica: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_replica(self, replica: usize) -> Self {
        Error::Replica {
            replica,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
