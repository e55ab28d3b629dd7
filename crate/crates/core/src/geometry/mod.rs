//! Shared geometric primitives: grids, cameras, poses, depth rasters,
//! matches, meshes, and images.

pub mod depth;
pub mod grid;
pub mod image;
pub mod intrinsics;
pub mod matches;
pub mod mesh;
pub mod pose;

pub use depth::{DepthMap, SimulatedDepth, SparseDepth};
pub use grid::{bilinear_corners, bilinear_sample, Grid};
pub use image::ColorImage;
pub use intrinsics::CameraIntrinsics;
pub use matches::{FeatureMatch, FeatureMatchSet, PixelPair};
pub use mesh::{PointCloud, TriangleMesh};
pub use pose::Pose;
