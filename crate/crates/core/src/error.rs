use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unknown element id {0}")]
    UnknownElement(usize),

    #[error("element {0} is not a leaf")]
    NotALeaf(usize),

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular local matrix on element {element}")]
    SingularLocalMatrix { element: usize },

    #[error("eigendecomposition failed for flux matrix")]
    Eigendecomposition,

    #[error("Poisson compatibility violated: mass defect {defect:.3e} exceeds {tolerance:.3e}")]
    Compatibility { defect: f64, tolerance: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("non-separable initial condition: {0}")]
    NonSeparable(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
