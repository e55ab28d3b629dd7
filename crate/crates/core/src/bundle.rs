//! In-memory sequence bundles: everything the back-end consumes for one
//! video sequence, as produced by the SfM + depth-network front-end (or the
//! synthetic generator standing in for it).

use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, ColorImage, DepthMap, FeatureMatchSet, Pose, SparseDepth,
};
use crate::synth::SceneSpec;

/// One frame's complete inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub frame_id: usize,
    /// Predicted depth with per-pixel uncertainty, in SfM-consistent scale
    /// after depth scaling.
    pub depth: DepthMap,
    pub color: Option<ColorImage>,
    /// Sparse metric anchors from SfM.
    pub sparse: SparseDepth,
    /// Camera-to-world pose.
    pub pose: Pose,
}

/// Clean values retained by the synthetic generator: what the sequence
/// looked like before noise and corruption.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<Pose>,
    pub depths: Vec<DepthMap>,
    pub scene: SceneSpec,
}

/// A full sequence: shared intrinsics, per-frame bundles in temporal order,
/// cross-frame feature matches, and (for synthetic data) the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBundle {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameBundle>,
    pub matches: FeatureMatchSet,
    pub ground_truth: Option<GroundTruth>,
}

impl SequenceBundle {
    /// Structural checks: non-empty, frames shaped like the intrinsics,
    /// matches referencing only existing frames, ground truth aligned.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidInput("bundle has no frames".into()));
        }
        for f in &self.frames {
            if f.depth.width() != self.intrinsics.width
                || f.depth.height() != self.intrinsics.height
            {
                return Err(Error::DimensionMismatch(format!(
                    "frame {} depth {}x{} vs intrinsics {}x{}",
                    f.frame_id,
                    f.depth.width(),
                    f.depth.height(),
                    self.intrinsics.width,
                    self.intrinsics.height
                )));
            }
            if f.sparse.width() != self.intrinsics.width
                || f.sparse.height() != self.intrinsics.height
            {
                return Err(Error::DimensionMismatch(format!(
                    "frame {} sparse raster mismatches intrinsics",
                    f.frame_id
                )));
            }
            if let Some(img) = &f.color {
                if img.width() != self.intrinsics.width || img.height() != self.intrinsics.height
                {
                    return Err(Error::DimensionMismatch(format!(
                        "frame {} color image mismatches intrinsics",
                        f.frame_id
                    )));
                }
            }
        }
        let ids: Vec<usize> = self.frames.iter().map(|f| f.frame_id).collect();
        for m in self.matches.iter() {
            if !ids.contains(&m.frame_a) || !ids.contains(&m.frame_b) {
                return Err(Error::InvalidInput(format!(
                    "match references missing frame ({}, {})",
                    m.frame_a, m.frame_b
                )));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.poses.len() != self.frames.len() || gt.depths.len() != self.frames.len() {
                return Err(Error::DimensionMismatch(
                    "ground truth not aligned with frames".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Position of a frame id in the frame list.
    pub fn frame_index(&self, frame_id: usize) -> Option<usize> {
        self.frames.iter().position(|f| f.frame_id == frame_id)
    }
}
