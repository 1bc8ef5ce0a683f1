use thiserror::Error;

/// Errors produced by the synthesis and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid plant:\n  - {}", .0.join("\n  - "))]
    InvalidPlant(Vec<String>),

    #[error("no stabilizing Riccati solution: {0}")]
    Infeasible(String),

    #[error("degenerate Riccati pencil: {0}")]
    DegeneratePencil(String),

    #[error("singular resolvent at omega = {omega}")]
    SingularResolvent { omega: f64 },

    #[error("closed loop is not Schur (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },

    #[error("simulation diverged: state not decayed after {steps} steps")]
    Diverging { steps: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("synthesis failed: {0}")]
    SynthesisFailure(String),

    #[error("spectral factorization failed: {0}")]
    Factorization(String),

    #[error("FIR order {order} too small (fit error {fit_error:e}, inverse tail {tail:e}); increase the order")]
    OrderTooSmall {
        order: usize,
        fit_error: f64,
        tail: f64,
    },

    #[error("gap bound unavailable: {0}")]
    BoundUnavailable(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("malformed signal: {0}")]
    Signal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
