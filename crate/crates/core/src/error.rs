use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any grad-enabled tensor")]
    DetachedGraph,
    #[error("backward already ran on this tape; call reset_backward first")]
    BackwardTwice,
    #[error("requested {k} neighbors but only {available} candidates exist")]
    TooManyNeighbors { k: usize, available: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("degenerate point cloud: all points coincide")]
    DegenerateCloud,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("point cloud has no normals")]
    MissingNormals,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate camera geometry: {0}")]
    DegenerateCamera(&'static str),
    #[error("point {index} is not in front of the camera (z = {z})")]
    BehindCamera { index: usize, z: f64 },
    #[error("image size mismatch: expected {expected:?}, got {got:?}")]
    ImageSize {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("non-finite loss for sample {sample}: {detail}")]
    NonFiniteLoss { sample: String, detail: String },
    #[error("no foreground pixels after {0} viewpoint attempts")]
    EmptyForeground(usize),
    #[error("empty image bank")]
    EmptyBank,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
