use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrError {
    #[error("invalid dimension: {0}")]
    Dimension(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("vector is not horizontal: |theta(v)| = {0:e}")]
    NotHorizontal(f64),
    #[error("degenerate Levi form at point (smallest pivot {0:e})")]
    SingularLevi(f64),
    #[error("connection axioms inconsistent: residual {0:e}")]
    AxiomResidual(f64),
    #[error("model is not compact; integral suites need a compact model")]
    NotCompact,
    #[error("invalid grid resolution {0}: need R >= 4")]
    Resolution(usize),
    #[error("finite-difference convergence order {order:.2} below {required}")]
    Convergence { order: f64, required: f64 },
    #[error("non-finite integrand at node {node}: {value}")]
    NonFinite { node: usize, value: f64 },
    #[error("galerkin basis degenerate: {0}")]
    DegenerateBasis(String),
    #[error("unsupported in dimension n = {0}")]
    UnsupportedDimension(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CrError>;
