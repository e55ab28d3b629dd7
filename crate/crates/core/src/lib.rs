//! Uncertainty-aware dense 3D reconstruction from monocular depth
//! predictions.
//!
//! The crate takes per-frame depth maps with pixel-wise standard deviations,
//! camera poses, sparse metric anchors, and feature matches, and turns them
//! into a fused truncated-signed-distance volume and triangle mesh. Around
//! that core sit the supporting pieces: log-likelihood consistency losses,
//! depth warping and flow, raycast depth simulation, reconstruction failure
//! detection, pose-graph refinement, ICP-based evaluation, a synthetic
//! ground-truth generator, and file formats for bundles, rasters, and
//! meshes.

pub mod autodiff;
pub mod bundle;
pub mod depth_ops;
pub mod error;
pub mod failure;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod pose_graph;
pub mod registration;
pub mod synth;
pub mod tsdf;

pub use bundle::{FrameBundle, GroundTruth, SequenceBundle};
pub use error::{Error, Result};
pub use geometry::{
    CameraIntrinsics, ColorImage, DepthMap, FeatureMatch, FeatureMatchSet, Grid, PixelPair,
    PointCloud, Pose, SimulatedDepth, SparseDepth, TriangleMesh,
};
