use thiserror::Error;

use crate::dynamics::HkbState;

pub type Result<T, E = VpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Integration produced a non-finite value; carries the last finite state.
    #[error("integration diverged at t = {t}: last finite state x = {}, y = {}", last.x, last.y)]
    Divergence { last: HkbState, t: f64 },

    #[error("no limit-cycle region: {0}")]
    NoRegion(String),

    #[error("condition violated: {0}")]
    Condition(String),

    #[error("singular system (|det| = {det:e}, scale = {scale:e})")]
    Singular { det: f64, scale: f64 },

    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(VpError::InvalidInput(format!("{name} must be finite")))
    }
}
