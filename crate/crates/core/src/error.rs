use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("unreachable target: position residual {position_residual:.3e} m, orientation residual {orientation_residual:.3e} rad")]
    UnreachableTarget {
        position_residual: f64,
        orientation_residual: f64,
    },

    #[error("singular compensator geometry: spring length is zero")]
    SingularGeometry,

    #[error("near-singular configuration: Jacobian condition number {condition:.3e}")]
    SingularConfiguration { condition: f64 },

    #[error("under-actuated chain: {joints} joints cannot span a 6x6 Cartesian stiffness")]
    UnderActuated { joints: usize },

    #[error("pose compensation did not converge after {iterations} iterations (residual {residual:.3e} m)")]
    CompensationFailure { iterations: usize, residual: f64 },

    #[error("unidentifiable parameter set (condition {condition:.3e}); null-space combinations: {}", .combinations.join("; "))]
    Unidentifiable {
        condition: f64,
        combinations: Vec<String>,
    },

    #[error("identification did not converge after {iterations} iterations (rms {rms:.3e} m)")]
    NonConvergence { iterations: usize, rms: f64 },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Parse(_) => 3,
            Error::InvalidModel(_) | Error::InvalidConfiguration(_) => 4,
            Error::UnreachableTarget { .. } => 5,
            Error::SingularGeometry | Error::SingularConfiguration { .. } => 6,
            Error::UnderActuated { .. } => 7,
            Error::CompensationFailure { .. } => 8,
            Error::Unidentifiable { .. } => 9,
            Error::NonConvergence { .. } => 10,
        }
    }
}
