use thiserror::Error;

/// Errors raised by the lab.
///
/// Configuration problems and numerical failures are kept apart so that the
/// command-line front end can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("grid too coarse: n = {0} (need at least 8 nodes)")]
    GridTooCoarse(usize),

    #[error("wavenumber {k} exceeds the cap {cap}")]
    WavenumberCap { k: i32, cap: i32 },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error(
        "initial vorticity is not compatible: <w, e^(ky)> = {plus:.3e}, <w, e^(-ky)> = {minus:.3e}"
    )]
    Incompatible { plus: f64, minus: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds limit, suggested dt = {suggested:.3e}")]
    Cfl { dt: f64, suggested: f64 },

    #[error("no decay window: norm only fell to {reached:.3e} of its maximum")]
    NoDecayWindow { reached: f64 },

    #[error("not enough points for a fit: {0} (need at least 3)")]
    TooFewPoints(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// Whether the failure stems from the input rather than from the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            LabError::Config(_)
                | LabError::GridTooCoarse(_)
                | LabError::WavenumberCap { .. }
                | LabError::Incompatible { .. }
                | LabError::TooFewPoints(_)
                | LabError::Shape { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
