use thiserror::Error;

/// Errors raised by the computational modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported geometry kind: {0}")]
    UnsupportedKind(String),

    #[error("incompatible Neumann data at z = {z}: residual {residual:.3e} exceeds {tolerance:.3e}")]
    IncompatibleData { z: f64, residual: f64, tolerance: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("flow trajectory left the channel at z = {z} (distance {distance:.3e})")]
    FlowEscape { z: f64, distance: f64 },

    #[error("time step {dt:.3e} violates the stability limit {limit:.3e}")]
    Timestep { dt: f64, limit: f64 },

    #[error("non-positive density {value:.3e} in cell {cell}")]
    Positivity { cell: usize, value: f64 },

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("solution breakdown at t = {time:.4}: max |u| = {max_velocity:.3e}")]
    Breakdown { time: f64, max_velocity: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("coercivity violation: {0}")]
    CoercivityViolation(String),

    #[error("eigensolver did not converge after {iterations} iterations (relative change {change:.3e})")]
    Eigensolver { iterations: usize, change: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("ill-posed constraint: {0}")]
    IllPosedConstraint(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
