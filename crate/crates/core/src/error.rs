use thiserror::Error;

use crate::destabilizer::DestabilizerCertificate;
use crate::flow::FlowTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("polynomial degree {degree} exceeds the supported bound {bound}")]
    UnsupportedDegree { degree: usize, bound: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown polytope `{name}` (available: {})", available.join(", "))]
    UnknownPolytope { name: String, available: Vec<String> },

    #[error("ratio undefined for a function of zero norm")]
    UndefinedRatio,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("certification failed: {reason}")]
    Certification { reason: String, candidate: Option<Box<DestabilizerCertificate>> },

    #[error("discrete convexity lost at node {node} (x = {x:?})")]
    ConvexityLoss { node: usize, x: Vec<f64> },

    #[error("time step underflow at t = {t}: dt = {dt:e}")]
    Stiffness { t: f64, dt: f64 },

    #[error("insufficient precision: {0}")]
    Precision(String),

    #[error("flow aborted at t = {t}: {reason}")]
    AbortedRun { t: f64, reason: Box<Error>, partial: Box<FlowTrace> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
