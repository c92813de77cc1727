use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SawError {
    #[error("panel is unbalanced: no observation for unit {unit} at time {time}")]
    UnbalancedPanel { unit: String, time: String },
    #[error("duplicate observation for unit {unit} at time {time}")]
    DuplicateCell { unit: String, time: String },
    #[error("non-numeric value {value:?} in column {column} (unit {unit}, time {time})")]
    NonNumericValue {
        unit: String,
        time: String,
        column: String,
        value: String,
    },
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("first-stage cross-product is singular for regressor {regressor}")]
    RankDeficientFirstStage { regressor: usize },
    #[error("instrument count {found} does not match regressor count {expected}; use two-stage instruments")]
    InstrumentCount { expected: usize, found: usize },
    #[error("length {0} is not a power of two")]
    NonDyadicLength(usize),
    #[error("wavelet index out of range: level {level}, translation {translation}, depth {depth}")]
    IndexOutOfRange {
        level: usize,
        translation: usize,
        depth: usize,
    },
    #[error("singular matrix ({context})")]
    SingularMatrix { context: String },
    #[error("matrix square root is not real ({context})")]
    NonRealResult { context: String },
    #[error("jump location {location} outside (0, {horizon}) or duplicated for regressor {regressor}")]
    EmptySegment {
        regressor: usize,
        location: usize,
        horizon: usize,
    },
    #[error("post-SAW design column {column} is identically zero")]
    CollinearDesign { column: usize },
    #[error("post-SAW instrument cross-product is singular")]
    SingularCrossProduct,
    #[error("variance case {0} out of range 1..=4")]
    VarianceCase(u8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl SawError {
    /// Stable machine-readable code, used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            SawError::UnbalancedPanel { .. } => "UNBALANCED_PANEL",
            SawError::DuplicateCell { .. } => "DUPLICATE_CELL",
            SawError::NonNumericValue { .. } => "NON_NUMERIC_VALUE",
            SawError::MissingColumn(_) => "MISSING_COLUMN",
            SawError::InvalidPanel(_) => "INVALID_PANEL",
            SawError::ShapeMismatch(_) => "SHAPE_MISMATCH",
            SawError::RankDeficientFirstStage { .. } => "RANK_DEFICIENT_FIRST_STAGE",
            SawError::InstrumentCount { .. } => "INSTRUMENT_COUNT",
            SawError::NonDyadicLength(_) => "NON_DYADIC_LENGTH",
            SawError::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            SawError::SingularMatrix { .. } => "SINGULAR_MATRIX",
            SawError::NonRealResult { .. } => "NON_REAL_RESULT",
            SawError::EmptySegment { .. } => "EMPTY_SEGMENT",
            SawError::CollinearDesign { .. } => "COLLINEAR_DESIGN",
            SawError::SingularCrossProduct => "SINGULAR_CROSS_PRODUCT",
            SawError::VarianceCase(_) => "VARIANCE_CASE",
            SawError::Config(_) => "CONFIG",
            SawError::Io(_) => "IO",
        }
    }

    /// True for errors caused by the caller's input or configuration
    /// rather than by the estimation itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            SawError::MissingColumn(_)
                | SawError::Config(_)
                | SawError::VarianceCase(_)
                | SawError::Io(_)
        )
    }
}

impl From<std::io::Error> for SawError {
    fn from(e: std::io::Error) -> Self {
        SawError::Io(e.to_string())
    }
}

impl From<csv::Error> for SawError {
    fn from(e: csv::Error) -> Self {
        SawError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SawError>;
