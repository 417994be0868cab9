use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("flow `{flow}` is defined on the {expected} but the mesh covers the {found}")]
    DomainMismatch {
        flow: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid flow parameters: {0}")]
    InvalidFlow(String),

    #[error("size mismatch in {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("state vectors live on different meshes")]
    MeshMismatch,

    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:.3e}, target {target:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors raised by the linear solvers.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::NotConverged { .. })
    }
}
