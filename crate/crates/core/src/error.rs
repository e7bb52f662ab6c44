use alloc::string::String;

/// Errors raised by the solvers and data containers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("prefix length {requested} outside 1..={available}")]
    PrefixOutOfRange { requested: usize, available: usize },
    #[error("split leaves an empty side (train {train}, test {test})")]
    EmptySplit { train: usize, test: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("Hessian not positive definite after {escalations} jitter escalations{}", stage_suffix(*.stage))]
    SingularHessian {
        escalations: u32,
        stage: Option<usize>,
    },
    #[error("line search stalled after {halvings} halvings (decrement {lambda:.3e}){}", stage_suffix(*.stage))]
    Stalled {
        halvings: u32,
        lambda: f64,
        stage: Option<usize>,
    },
    #[error("hand-over violated at stage {stage}: decrement {lambda:.4} exceeds {limit:.4}")]
    HandoverViolation {
        stage: usize,
        lambda: f64,
        limit: f64,
    },
    #[error("no convergence within {iterations} iterations{}", stage_suffix(*.stage))]
    NotConverged {
        iterations: usize,
        stage: Option<usize>,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

fn stage_suffix(stage: Option<usize>) -> String {
    match stage {
        Some(t) => alloc::format!(" at stage {t}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a continuation stage index to solver errors that carry one.
    pub fn at_stage(self, t: usize) -> Self {
        match self {
            Error::SingularHessian { escalations, .. } => Error::SingularHessian {
                escalations,
                stage: Some(t),
            },
            Error::Stalled {
                halvings, lambda, ..
            } => Error::Stalled {
                halvings,
                lambda,
                stage: Some(t),
            },
            Error::NotConverged { iterations, .. } => Error::NotConverged {
                iterations,
                stage: Some(t),
            },
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
