use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinates")]
    NonFinite,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("flow blow-up at t = {t}: |x| = {norm:e}")]
    FlowBlowUp { t: f64, norm: f64 },

    #[error("precondition failed: {what} = {value:e} exceeds {threshold:e}")]
    Precondition { what: String, value: f64, threshold: f64 },

    #[error("axiom `{name}` violated: residual {value:e} > {tol:e}")]
    AxiomViolation { name: String, value: f64, tol: f64 },

    #[error("infeasible boundary data: chord residual {0:e}")]
    InfeasibleBoundary(f64),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("slice tau = {s} outside [{lo}, {hi}]")]
    SliceOutsideGrid { s: f64, lo: f64, hi: f64 },

    #[error("image of Legendrian is not affine: defect {0:e}")]
    NotAffine(f64),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(CoreError::DimensionMismatch { expected, got })
    }
}
