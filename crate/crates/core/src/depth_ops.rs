//! Depth warping, global depth scaling, and dense optical flow.
//!
//! These are the geometric plumbing under the consistency losses: warping
//! reprojects one frame's depth into another frame's pixel grid, scaling
//! aligns predicted depth with sparse metric anchors, and flow turns depth +
//! relative pose into pixel displacements.

use rayon::prelude::*;

use crate::autodiff::{GPose, Real, V3};
use crate::error::{Error, Result};
use crate::geometry::grid::bilinear_sample_generic;
use crate::geometry::{CameraIntrinsics, DepthMap, Grid, Pose, SparseDepth};

/// Depth of frame `k` warped into frame `j`'s pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    warped_depth: Grid<f64>,
    overlap: Grid<bool>,
}

impl WarpResult {
    pub fn warped_depth(&self) -> &Grid<f64> {
        &self.warped_depth
    }

    pub fn overlap(&self) -> &Grid<bool> {
        &self.overlap
    }

    pub fn overlap_count(&self) -> usize {
        self.overlap.count_set()
    }
}

/// Per-pixel displacement in normalized units (`Δu/width`, `Δv/height`).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    flow: Grid<[f64; 2]>,
    valid: Grid<bool>,
}

impl FlowMap {
    pub fn flow(&self) -> &Grid<[f64; 2]> {
        &self.flow
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count_set()
    }

    /// Bilinear flow at a subpixel location; all four cell corners must be
    /// valid.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let (w, h) = (self.flow.width(), self.flow.height());
        if !(x >= 0.0 && x <= (w - 1) as f64 && y >= 0.0 && y <= (h - 1) as f64) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        for (u, v) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
            if !self.valid.get(u, v) {
                return None;
            }
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (1.0 - fx) * (1.0 - fy) * self.flow.get(x0, y0)[c]
                + fx * (1.0 - fy) * self.flow.get(x1, y0)[c]
                + (1.0 - fx) * fy * self.flow.get(x0, y1)[c]
                + fx * fy * self.flow.get(x1, y1)[c];
        }
        Some(out)
    }
}

fn check_shapes(map: &DepthMap, intr: &CameraIntrinsics) -> Result<()> {
    if map.width() != intr.width || map.height() != intr.height {
        return Err(Error::DimensionMismatch(format!(
            "depth map {}x{} vs intrinsics {}x{}",
            map.width(),
            map.height(),
            intr.width,
            intr.height
        )));
    }
    Ok(())
}

/// One pixel of the warp: unproject target pixel `(u, v)` at depth `z_target`
/// from frame `j`, move into frame `k`, sample frame `k`'s depth there, lift
/// the sample back to 3D, and return its z-coordinate in frame `j`.
///
/// Generic over the scalar so the pose optimizer can differentiate through
/// the whole chain, interpolation weights included.
pub(crate) fn warp_pixel<T: Real>(
    u: usize,
    v: usize,
    z_target: f64,
    source_mean: &Grid<f64>,
    source_valid: &Grid<bool>,
    intr: &CameraIntrinsics,
    pose_target: &GPose<T>,
    pose_source: &GPose<T>,
) -> Option<T> {
    let ray = intr.ray(u as f64, v as f64);
    let x_j = V3::<T>::lift(&(ray * z_target));
    let x_k = pose_source.inverse_transform(pose_target.transform(x_j));
    if x_k.z.val() <= 0.0 {
        return None;
    }
    let fx = T::from_f64(intr.fx);
    let fy = T::from_f64(intr.fy);
    let cx = T::from_f64(intr.cx);
    let cy = T::from_f64(intr.cy);
    let qu = fx * x_k.x / x_k.z + cx;
    let qv = fy * x_k.y / x_k.z + cy;
    let z_s = bilinear_sample_generic(source_mean, source_valid, qu, qv)?;
    if z_s.val() <= 0.0 {
        return None;
    }
    let y_k = V3::new((qu - cx) / fx * z_s, (qv - cy) / fy * z_s, z_s);
    let y_j = pose_target.inverse_transform(pose_source.transform(y_k));
    (y_j.z.val() > 0.0).then_some(y_j.z)
}

/// One pixel of dense flow: where does target pixel `(u, v)` at depth `z`
/// land in frame `k`, as a normalized displacement. `None` when the moved
/// point ends up behind frame `k`'s camera. The depth is a scalar parameter
/// too, so the same code yields flow derivatives with respect to depth.
pub(crate) fn flow_pixel<T: Real>(
    u: usize,
    v: usize,
    z: T,
    intr: &CameraIntrinsics,
    pose_j: &GPose<T>,
    pose_k: &GPose<T>,
) -> Option<[T; 2]> {
    let ray = intr.ray(u as f64, v as f64);
    let x_j = V3::new(
        T::from_f64(ray.x) * z,
        T::from_f64(ray.y) * z,
        z,
    );
    let x_k = pose_k.inverse_transform(pose_j.transform(x_j));
    if x_k.z.val() <= 0.0 {
        return None;
    }
    let qu = T::from_f64(intr.fx) * x_k.x / x_k.z + T::from_f64(intr.cx);
    let qv = T::from_f64(intr.fy) * x_k.y / x_k.z + T::from_f64(intr.cy);
    let inv_w = T::from_f64(1.0 / intr.width as f64);
    let inv_h = T::from_f64(1.0 / intr.height as f64);
    Some([
        (qu - T::from_f64(u as f64)) * inv_w,
        (qv - T::from_f64(v as f64)) * inv_h,
    ])
}

/// Warp `source` (frame `k`) into the pixel grid of `target` (frame `j`).
///
/// Gather-style: each valid target pixel is unprojected with the target's
/// own depth, moved into the source frame, and the source depth is sampled
/// bilinearly at the landing spot; the sampled point is lifted back into the
/// target frame and its z-component recorded. The overlap mask keeps only
/// pixels for which every step succeeded.
pub fn warp_depth(
    source: &DepthMap,
    target: &DepthMap,
    pose_source: &Pose,
    pose_target: &Pose,
    intr: &CameraIntrinsics,
) -> Result<WarpResult> {
    check_shapes(source, intr)?;
    check_shapes(target, intr)?;
    let (w, h) = (target.width(), target.height());
    let g_target: GPose<f64> = GPose::lift(pose_target);
    let g_source: GPose<f64> = GPose::lift(pose_source);

    let mut warped = Grid::new_fill(w, h, 0.0);
    let mut overlap = Grid::new_fill(w, h, false);
    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    if !target.is_valid(u, v) {
                        return None;
                    }
                    warp_pixel(
                        u,
                        v,
                        *target.mean().get(u, v),
                        source.mean(),
                        source.valid(),
                        intr,
                        &g_target,
                        &g_source,
                    )
                })
                .collect()
        })
        .collect();
    for (v, row) in rows.into_iter().enumerate() {
        for (u, z) in row.into_iter().enumerate() {
            if let Some(z) = z {
                warped.set(u, v, z);
                overlap.set(u, v, true);
            }
        }
    }
    Ok(WarpResult {
        warped_depth: warped,
        overlap,
    })
}

/// Globally rescale a predicted depth map so its mean over the sparse-anchor
/// pixels matches the anchors' mean. Returns the scaled map and the scale.
/// Anchors falling on invalid predicted pixels are ignored.
pub fn scale_depth(predicted: &DepthMap, sparse: &SparseDepth) -> Result<(DepthMap, f64)> {
    if predicted.width() != sparse.width() || predicted.height() != sparse.height() {
        return Err(Error::DimensionMismatch(format!(
            "predicted {}x{} vs sparse {}x{}",
            predicted.width(),
            predicted.height(),
            sparse.width(),
            sparse.height()
        )));
    }
    if sparse.count() == 0 {
        return Err(Error::NoSparseAnchor);
    }
    let mut sum_sparse = 0.0;
    let mut sum_pred = 0.0;
    let mut n = 0usize;
    for (u, v, d) in sparse.iter() {
        if predicted.is_valid(u, v) {
            sum_sparse += d;
            sum_pred += predicted.mean().get(u, v);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoSparseAnchor);
    }
    if sum_pred <= 0.0 {
        return Err(Error::DegenerateInput(
            "predicted depth mean under sparse mask is not positive".into(),
        ));
    }
    let scale = sum_sparse / sum_pred;
    let mut mean = predicted.mean().clone();
    let mut std = predicted.std().clone();
    for x in mean.as_mut_slice() {
        *x *= scale;
    }
    for x in std.as_mut_slice() {
        *x *= scale;
    }
    let scaled = DepthMap::new(mean, std, predicted.valid().clone())?;
    Ok((scaled, scale))
}

/// Dense flow from frame `j` to frame `k` induced by `depth_j` and the
/// relative pose, in normalized units. Pixels are invalid where `depth_j` is
/// invalid or the moved point falls behind frame `k`'s camera; landing
/// outside the image does not invalidate a pixel.
pub fn dense_flow(
    depth_j: &DepthMap,
    pose_j: &Pose,
    pose_k: &Pose,
    intr: &CameraIntrinsics,
) -> Result<FlowMap> {
    check_shapes(depth_j, intr)?;
    let (w, h) = (depth_j.width(), depth_j.height());
    let g_j: GPose<f64> = GPose::lift(pose_j);
    let g_k: GPose<f64> = GPose::lift(pose_k);
    let mut flow = Grid::new_fill(w, h, [0.0; 2]);
    let mut valid = Grid::new_fill(w, h, false);
    let rows: Vec<Vec<Option<[f64; 2]>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    if !depth_j.is_valid(u, v) {
                        return None;
                    }
                    flow_pixel::<f64>(u, v, *depth_j.mean().get(u, v), intr, &g_j, &g_k)
                })
                .collect()
        })
        .collect();
    for (v, row) in rows.into_iter().enumerate() {
        for (u, f) in row.into_iter().enumerate() {
            if let Some(f) = f {
                flow.set(u, v, f);
                valid.set(u, v, true);
            }
        }
    }
    Ok(FlowMap { flow, valid })
}
