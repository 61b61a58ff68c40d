use thiserror::Error;

/// Errors reported by the library. Validation failures (malformed systems,
/// out-of-range indices, mismatched metric spaces) are kept distinct from
/// mathematical outcomes such as an incompatible composition, which carries
/// a witness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state index {index} out of range (system has {count} states)")]
    StateOutOfRange { index: usize, count: usize },

    #[error("{which} input index {index} out of range ({count} symbols)")]
    InputOutOfRange {
        which: &'static str,
        index: usize,
        count: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pseudometric spaces do not match: {0}")]
    MetricSpaceMismatch(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid controller: {0}")]
    InvalidController(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error(
        "network incompatible for M-approximate composition: component {component}, \
         neighbor output tuple {tuple:?} has no internal input within {mu}"
    )]
    Incompatible {
        component: usize,
        tuple: Vec<f64>,
        mu: f64,
    },

    #[error("model is not monotone; the corner over-approximation would be unsound")]
    NonMonotone,

    #[error("update map is not a contraction (factor {factor})")]
    NotContractive { factor: f64 },

    #[error("point {point:?} outside grid domain")]
    OutsideGrid { point: Vec<f64> },

    #[error("state left the admissible domain during integration")]
    DomainEscape,

    #[error("no related abstract state in the controller domain for {state:?}")]
    Uncontrollable { state: Vec<f64> },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
