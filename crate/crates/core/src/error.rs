use thiserror::Error;

/// Errors produced by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("n ≥ 1 required")]
    EmptyDataset,
    #[error("non-binary assignment {value} at row {row}")]
    NonBinaryAssignment { row: usize, value: f64 },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { row: usize, column: String },
    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("design probability {value} at row {row} outside (0,1)")]
    InvalidDesignProbability { row: usize, value: f64 },
    #[error("at least one covariate column required")]
    NoCovariates,
    #[error("column index {index} out of range (d = {d})")]
    ColumnOutOfRange { index: usize, d: usize },
    #[error("quantile cuts must be strictly increasing in (0,1)")]
    InvalidCuts,
    #[error("subgroup {group} is empty")]
    EmptySubgroup { group: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("singular design; increase ridge")]
    SingularDesign,
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no positive weights")]
    NoPositiveWeights,
    #[error("fold too small: {size} units for {params} parameters")]
    FoldTooSmall { size: usize, params: usize },
    #[error("kernel size {k} exceeds sample size {n}")]
    KernelTooLarge { k: usize, n: usize },
    #[error("subgroup too large for enumeration: {size} > {max}")]
    SubgroupTooLarge { size: usize, max: usize },
    #[error("initial proportion too large: subgroup {group} has no inference units left")]
    InitialProportionTooLarge { group: usize },
    #[error("budget must be positive")]
    NonPositiveBudget,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("p-value {0} must lie in (0,1]")]
    InvalidPValue(f64),
    #[error("too many hypotheses for exhaustive closed testing: {k} > {max}")]
    TooManyHypotheses { k: usize, max: usize },
    #[error("unsupported design: {0}")]
    UnsupportedDesign(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("convergence metric needs at least 2 inference units")]
    TooFewInferenceUnits,
    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
