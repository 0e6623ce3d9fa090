use thiserror::Error;

use crate::geometry::Termination;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {0:?} lies outside the model domain")]
    OutsideDomain(Vec<f64>),

    #[error("metric is degenerate at {point:?} (reciprocal condition number {rcond:e})")]
    DegenerateMetric { point: Vec<f64>, rcond: f64 },

    #[error("metric at {point:?} has {found} negative eigenvalues, expected {expected}")]
    WrongSignature {
        point: Vec<f64>,
        expected: usize,
        found: usize,
    },

    #[error("model provides neither a metric nor a connection")]
    NoConnection,

    #[error("model has no metric")]
    NoMetric,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid integrator configuration: {0}")]
    Config(String),

    #[error("integration stopped before the end of the span ({0:?})")]
    Incomplete(Termination),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("chart singularity: {0}")]
    ChartSingularity(String),

    #[error("point is not on the quadric <P,P> = 1 (residual {0:e})")]
    OffQuadric(f64),

    #[error("differential of the boundary function vanishes at {0:?}")]
    ZeroGradient(Vec<f64>),

    #[error("path node {index} is on or outside the boundary (phi = {phi:e})")]
    NodeOutside { index: usize, phi: f64 },

    #[error("Killing field is not timelike along the curve (<K,K> = {0:e})")]
    NotTimelike(f64),

    #[error("radicand K + sum c_i^2/f_i^2 is not positive on the range (turning-point regime)")]
    TurningPoint,

    #[error("expression error: {0}")]
    Expr(#[from] crate::expr::ExprError),

    #[error("model file error: {0}")]
    ModelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
