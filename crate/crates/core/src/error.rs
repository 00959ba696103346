use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid activation: {0}")]
    InvalidActivation(String),
    #[error("no admissible turning point: every breakpoint has opposite adjacent slopes")]
    NoAdmissibleTurningPoint,
    #[error("activation is linear, no turning point exists")]
    LinearActivation,
    #[error("label column {sample} is not one-hot")]
    NotOneHot { sample: usize },
    #[error("fit did not converge after {iterations} iterations (grad norm {grad_norm:e}, unbounded suspected: {unbounded_suspected})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        unbounded_suspected: bool,
    },
    #[error("every residual row is zero: the data can be fit by an affine model")]
    AllRowsZero,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("constant sizing failed after {halvings} halvings")]
    SizingFailed { halvings: usize },
    #[error("layer {layer} has width {width}, needs at least {required}")]
    WidthViolation {
        layer: usize,
        width: usize,
        required: usize,
    },
    #[error("strict decrease not achieved (gap {gap:e})")]
    StrictDecreaseNotAchieved { gap: f64 },
    #[error("point lies on a cell boundary")]
    BoundaryCell,
    #[error("unsupported setting: {0}")]
    Unsupported(String),
    #[error("parameter points are not equivalent")]
    NotEquivalent,
    #[error("assumption check failed: {0}")]
    AssumptionFailed(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 for I/O and parsing, 3 for violated preconditions, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Parse(_) => 2,
            Error::NoAdmissibleTurningPoint
            | Error::LinearActivation
            | Error::NotOneHot { .. }
            | Error::AllRowsZero
            | Error::Precondition(_)
            | Error::WidthViolation { .. }
            | Error::BoundaryCell
            | Error::Unsupported(_)
            | Error::NotEquivalent
            | Error::AssumptionFailed(_)
            | Error::InvalidActivation(_)
            | Error::Shape(_) => 3,
            Error::NonConvergence { .. }
            | Error::SizingFailed { .. }
            | Error::StrictDecreaseNotAchieved { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
