use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("mesh is not edge-connected: {components} components")]
    DisconnectedMesh { components: usize },

    #[error("no rigidity weight for class {0}")]
    MissingRigidityClass(i64),

    #[error("invalid limits on DoF {dof}: min {min} > max {max}")]
    InvalidLimits { dof: usize, min: f64, max: f64 },

    #[error("skinning weights of vertex {vertex} sum to {sum}, expected 1")]
    SkinningNotNormalized { vertex: usize, sum: f64 },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("graph node count {requested} out of range [{min}, {max}]")]
    NodeCountOutOfRange {
        requested: usize,
        min: usize,
        max: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("blended dual quaternion of node {node} has zero norm")]
    DegenerateBlend { node: usize },

    #[error("degenerate ray configuration (condition number {condition:.3e})")]
    DegenerateRays { condition: f64 },

    #[error("camera projection matrix is singular")]
    SingularCamera,

    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("mask has no contour pixels")]
    EmptyContour,

    #[error("objective term '{0}' is not differentiable")]
    NotDifferentiable(String),

    #[error("unknown parameter block '{0}'")]
    UnknownBlock(String),

    #[error("non-finite loss at iteration {iteration} of {stage}")]
    NonFiniteLoss { stage: &'static str, iteration: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("frame count mismatch: {0} vs {1}")]
    FrameMismatch(usize, usize),

    #[error("empty sequence")]
    EmptySequence,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateBlend { .. }
                | Error::DegenerateRays { .. }
                | Error::NonFiniteLoss { .. }
                | Error::SingularCamera
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
