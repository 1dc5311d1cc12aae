use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Numeric payloads are reported as `f64` regardless of the scalar type the
/// computation ran in.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid operand: {0}")]
    InvalidOperand(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionError {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("degenerate trajectory: norm {norm:e} at grid index {index}")]
    DegenerateTrajectory { index: usize, norm: f64 },

    #[error("geometric phase undefined: |Z| = {modulus:e} below threshold {threshold:e}")]
    UndefinedGP { modulus: f64, threshold: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("integration diverged at step {step}: trace drift {drift:e}")]
    IntegrationDiverged { step: usize, drift: f64 },

    #[error("invalid channel at t = {time}: completeness deviation {deviation:e}")]
    InvalidChannel { time: f64, deviation: f64 },

    #[error("invalid degeneracy block: {0}")]
    InvalidBlock(String),

    #[error("decomposition changes the reservoir density matrix (deviation {deviation:e})")]
    InvalidDecomposition { deviation: f64 },

    #[error("<r|R_mu|r> = {value:e} != 0 for reservoir state {reservoir_index}, coupling {coupling_index}")]
    RCondViolated {
        reservoir_index: usize,
        coupling_index: usize,
        value: f64,
    },

    #[error("dissipator has a positive part (eigenvalue {eigenvalue:e}) at t = {time}")]
    InconsistentModel { time: f64, eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
