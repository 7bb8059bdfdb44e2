use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("solver error: {message}")]
    Solver { message: String, trace: Vec<String> },

    #[error("eigensolver error: {0}")]
    Eigen(String),

    #[error("resonant rho: {rho} lies within {distance:e} of eigenvalue {eigenvalue} (index {index})")]
    Resonant { rho: f64, eigenvalue: f64, index: i64, distance: f64 },

    #[error("singular Jacobian near rho = {rho}; nearest weighted eigenvalue {eigenvalue} (index {index})")]
    SingularJacobian { rho: f64, eigenvalue: f64, index: i64 },

    #[error("basis is truncated ({kept} of {total} modes); operation needs the full decomposition")]
    TruncatedBasis { kept: usize, total: usize },

    #[error("search failed: {0}")]
    Search(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn solver(message: impl Into<String>, trace: Vec<String>) -> Self {
        Error::Solver { message: message.into(), trace }
    }

    /// True for errors caused by the caller's data rather than by a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_)
                | Error::Geometry(_)
                | Error::Mesh(_)
                | Error::Parse(_)
                | Error::Resonant { .. }
                | Error::TruncatedBasis { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
