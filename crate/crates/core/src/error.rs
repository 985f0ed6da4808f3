use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    OutOfDomain(String),

    #[error("invalid correlation: {0}")]
    InvalidCorrelation(String),

    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),

    #[error("moment fit failed for {kind}: residual {residual:e}")]
    FitFailure { kind: String, residual: f64 },

    #[error("Nataf fit infeasible: {0}")]
    NatafInfeasible(String),

    #[error("value {value} of component {component} lies outside the support")]
    Support { component: usize, value: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("evaluation domain error: {message} (at {values})")]
    EvalDomain { message: String, values: String },

    #[error("design parameter mismatch: {0}")]
    DesignParam(String),

    #[error("unknown builtin limit state `{0}`")]
    UnknownBuiltin(String),

    #[error("zero gradient at u = {0:?}")]
    SingularPoint(Vec<f64>),

    #[error("no threshold exists (alpha = 0); EVPPI is zero")]
    NoThreshold,

    #[error("operation unsupported for dependent inputs: {0}")]
    UnsupportedForDependent(String),

    #[error("limit-state evaluation failed at sample {index}: {source}")]
    SampleEval { index: usize, source: Box<Error> },

    #[error("subset simulation stagnated at level {level} (threshold {threshold})")]
    Stagnation { level: usize, threshold: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("normalization undefined: all absolute EVPPI values are zero")]
    NormalizationUndefined,

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ (Error::Config { .. } | Error::Stage { .. }) => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Process exit status for the command line: 2 for configuration and
    /// input problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Syntax { .. }
            | Error::UnknownFunction { .. }
            | Error::UnknownIdentifier(_)
            | Error::UnknownBuiltin(_)
            | Error::InvalidCorrelation(_)
            | Error::InvalidParameters(_)
            | Error::DesignParam(_)
            | Error::Json(_)
            | Error::Io(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
