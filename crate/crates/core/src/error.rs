use thiserror::Error;

/// Errors raised by the model, oracle, sampler, solver and diagnostics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbfError {
    #[error("non-finite {quantity} at ({x}, {y})")]
    NonFiniteEvaluation { quantity: &'static str, x: f64, y: f64 },

    #[error("|grad xi| = {norm:e} below floor {floor:e} at ({x}, {y})")]
    DegenerateGradient { norm: f64, floor: f64, x: f64, y: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("convergence constants unavailable: {0}")]
    ConstantsUnavailable(String),

    #[error("quadrature did not converge at z = {z} (relative change {change:e} with {nodes} nodes)")]
    QuadratureNotConverged { z: f64, change: f64, nodes: usize },

    #[error("normalizer underflow ({0}); rescale beta or shrink the domain")]
    NormalizerUnderflow(String),

    #[error("slice at z = {z} has mass {mass:e} below floor {floor:e}")]
    EmptySlice { z: f64, mass: f64, floor: f64 },

    #[error("non-finite local mean force for particle {index}")]
    NonFiniteForce { index: usize },

    #[error("particle {index} left the finite range at step {step}")]
    NonFinitePosition { index: usize, step: u64 },

    #[error("time step {dt:e} exceeds the stability bound; admissible dt <= {admissible:e}")]
    CflViolation { dt: f64, admissible: f64 },

    #[error("negative density {value:e} in cell {cell} after step")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decay fit needs at least 5 positive points, got {0}")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, AbfError>;
