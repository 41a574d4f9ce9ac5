use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("unbound name `{name}` at {line}:{col}")]
    UnboundName {
        name: String,
        line: usize,
        col: usize,
    },

    #[error("index {index} out of range 1..{dim} at {line}:{col}")]
    IndexOutOfRange {
        index: i64,
        dim: usize,
        line: usize,
        col: usize,
    },

    #[error("exponent is not a rational constant at {line}:{col}")]
    NonRationalExponent { line: usize, col: usize },

    #[error("guard {index} has magnitude {value:.3e} below {threshold:.1e}")]
    GuardViolation {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("ill-conditioned kernel: singular value gap {gap:.3e} at the rank cut")]
    IllConditionedKernel { gap: f64 },

    #[error("rank changed from {expected} to {found}")]
    RankChange { expected: usize, found: usize },

    #[error("constant-rank assumption violated at order {order}: ranks {ranks:?}")]
    ConstantRankViolation { order: usize, ranks: Vec<usize> },

    #[error("constraint surface of order {order} not found: {reason}")]
    SurfaceNotFound { order: usize, reason: String },

    #[error("only {found} admissible samples, need {needed}")]
    TooFewSamples { found: usize, needed: usize },

    #[error("point is off the constraint surface (|c| = {violation:.3e})")]
    OffSurface { violation: f64 },

    #[error("gauge term {index} rejected: {reason}")]
    GaugeRejected { index: usize, reason: String },

    #[error("integration step failed at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("unknown built-in system `{0}`")]
    UnknownBuiltin(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl LagError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            LagError::Syntax { .. }
            | LagError::UnboundName { .. }
            | LagError::IndexOutOfRange { .. }
            | LagError::NonRationalExponent { .. } => 2,
            LagError::IllConditionedKernel { .. }
            | LagError::RankChange { .. }
            | LagError::ConstantRankViolation { .. } => 3,
            LagError::SurfaceNotFound { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LagError>;
