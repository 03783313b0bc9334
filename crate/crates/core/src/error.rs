use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("point {point:?} lies outside the box")]
    OutOfDomain { point: Vec<f64> },

    #[error("cell index {index} out of range (grid has {total} cells)")]
    IndexOutOfRange { index: usize, total: usize },

    #[error(
        "refinement budget exhausted after {halvings} halvings \
         (finest input widths {finest_in:?}, finest output widths {finest_out:?})"
    )]
    RefinementBudget {
        halvings: u32,
        finest_in: Vec<f64>,
        finest_out: Vec<f64>,
    },

    #[error("input cell {cell} is not contained in a single output cell")]
    NotContained { cell: usize },

    #[error("invalid node assignment: {0}")]
    Encoding(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numeric divergence at step {step}: state {state:?}")]
    NumericDivergence { step: usize, state: Vec<f64> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("enumeration budget exceeded: {assignments} assignments > budget {budget}")]
    EnumerationBudget { assignments: String, budget: u64 },

    #[error("quantile argument {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, written into run manifests.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidSpace(_) => "invalid_space",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::RefinementBudget { .. } => "refinement_budget",
            Error::NotContained { .. } => "not_contained",
            Error::Encoding(_) => "encoding",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::NumericDivergence { .. } => "numeric_divergence",
            Error::Contract(_) => "contract",
            Error::EnumerationBudget { .. } => "enumeration_budget",
            Error::InvalidProbability(_) => "invalid_probability",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Incompatible(_) => "incompatible",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
