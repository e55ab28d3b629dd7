//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by reconstruction operations.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid parameters or malformed input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Mismatched image, grid, or volume dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Attempted to project a point with non-positive camera-frame depth.
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    /// Depth value outside the valid (positive) domain.
    #[error("non-positive depth: {0}")]
    NonPositiveDepth(f64),

    /// Depth scaling was requested without any sparse anchor points.
    #[error("no sparse anchor: sparse mask is empty or never overlaps valid prediction")]
    NoSparseAnchor,

    /// A frame carries no usable sparse depth points.
    #[error("no sparse points for this frame")]
    NoSparsePoints,

    /// Degenerate numeric input (e.g. zero mean depth under the scaling mask).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Two frames share no overlapping valid region.
    #[error("no overlap between frames")]
    NoOverlap,

    /// No usable feature matches for a frame pair.
    #[error("no usable feature matches")]
    NoMatches,

    /// No simulated depth coverage intersecting the prediction.
    #[error("no simulated coverage")]
    NoSimulatedCoverage,

    /// The volume holds no observed voxels.
    #[error("empty reconstruction: volume has no observed voxels")]
    EmptyVolume,

    /// The volume holds observed voxels but no zero crossing.
    #[error("no surface: volume contains no sign change")]
    NoSurface,

    /// An operation requiring mesh data received an empty mesh.
    #[error("empty mesh")]
    EmptyMesh,

    /// Every pair in a pose graph problem is degenerate.
    #[error("unconstrained problem: no pair contributes a constraint")]
    UnconstrainedProblem,

    /// A synthetic trajectory left the scene's free space.
    #[error("trajectory exits free space at frame {frame}")]
    TrajectoryOutOfBounds { frame: usize },

    /// Unknown name for a corruption, loss, or mode selector.
    #[error("unknown selector: {0}")]
    UnknownSelector(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk data.
    #[error("parse error: {0}")]
    Parse(String),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
