//! Uncertainty-adaptive truncated-signed-distance volume.
//!
//! Depth maps are integrated with a per-voxel exponential update whose blend
//! ratio `r = clamp(S² / (S² + Σ²), c1, c2)` compares the incoming frame's
//! predicted standard deviation `S` against the voxel's running uncertainty
//! `Σ`: confident new depth pulls the stored distance hard toward the new
//! observation, uncertain depth barely moves it, and the clamp keeps any
//! single frame from having extreme or no impact. The truncation band also
//! adapts to the predicted std, so sharp predictions carve a narrow shell
//! while noisy ones spread their evidence.

mod mesh_extract;
mod raycast;
mod sample;
mod tables;

pub use mesh_extract::extract_mesh;
pub use raycast::simulate_depth;
pub use sample::mesh_to_pointcloud;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, ColorImage, DepthMap, Pose};

/// Smallest uncertainty ever stored in a voxel. Keeps the `Σ > 0` invariant
/// intact when a frame carries exact (zero-std) depth without disturbing the
/// blend-ratio limits: a floored std still clamps to `c1` against any real
/// stored uncertainty, and a floored stored value still yields `c2`.
pub(crate) const SIGMA_FLOOR: f64 = 1e-9;

/// Geometry and fusion constants for a [`TsdfVolume`].
///
/// `origin` is the world position of voxel `(0, 0, 0)`'s center; voxel
/// `(i, j, k)` sits at `origin + voxel_size · (i, j, k)`. `dims` counts
/// voxels per axis. Both may be left unset and filled from the first
/// frame's frustum via [`VolumeConfig::fit_frustum`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolumeConfig {
    pub voxel_size: f64,
    pub dims: Option<[usize; 3]>,
    pub origin: Option<[f64; 3]>,
    /// Lower clamp on the blend ratio; a maximally confident frame still
    /// leaves the old model this much weight.
    pub c1: f64,
    /// Upper clamp; a maximally uncertain frame still contributes `1 - c2`.
    pub c2: f64,
    /// Multiplier mapping predicted std to the truncation half-width.
    pub sigma_scale: f64,
    /// Floor on the truncation half-width, in scene units. `None` means one
    /// voxel, which keeps the band resolvable on the grid.
    pub delta_min: Option<f64>,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            dims: None,
            origin: None,
            c1: 0.1,
            c2: 0.8,
            sigma_scale: 2.0,
            delta_min: None,
        }
    }
}

impl VolumeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::InvalidInput(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if !(self.c1 > 0.0 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "clamp constants must satisfy 0 < c1 < c2 < 1, got ({}, {})",
                self.c1, self.c2
            )));
        }
        if !(self.sigma_scale.is_finite() && self.sigma_scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma_scale must be positive, got {}",
                self.sigma_scale
            )));
        }
        if let Some(d) = self.delta_min {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "delta_min must be positive when set, got {d}"
                )));
            }
        }
        if let Some(dims) = self.dims {
            if dims.iter().any(|&n| n == 0) {
                return Err(Error::InvalidInput(format!("zero-sized volume {dims:?}")));
            }
        }
        if let Some(o) = self.origin {
            if o.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput("non-finite volume origin".into()));
            }
        }
        Ok(())
    }

    /// Truncation floor with the one-voxel default applied.
    pub fn delta_min_value(&self) -> f64 {
        self.delta_min.unwrap_or(self.voxel_size)
    }

    pub fn is_bounded(&self) -> bool {
        self.dims.is_some() && self.origin.is_some()
    }

    /// Fill unset `origin`/`dims` so the grid covers everything the given
    /// frame observes, padded by the truncation band. Set fields are kept.
    pub fn fit_frustum(
        &self,
        depth: &DepthMap,
        pose: &Pose,
        intr: &CameraIntrinsics,
    ) -> Result<VolumeConfig> {
        self.validate()?;
        if self.is_bounded() {
            return Ok(self.clone());
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut max_std = 0.0f64;
        let mut seen = false;
        for (u, v, &ok) in depth.valid().iter_pixels() {
            if !ok {
                continue;
            }
            let z = *depth.mean().get(u, v);
            let p = pose.transform(&(intr.ray(u as f64, v as f64) * z));
            lo = lo.inf(&p);
            hi = hi.sup(&p);
            max_std = max_std.max(*depth.std().get(u, v));
            seen = true;
        }
        if !seen {
            return Err(Error::InvalidInput(
                "cannot fit volume bounds: depth map has no valid pixel".into(),
            ));
        }
        // Pad by the truncation band plus a margin. The extra half voxel
        // keeps the pad off integer voxel multiples, so a flat surface at a
        // round depth does not land exactly on a voxel plane with the band
        // edge on the next one.
        let pad = self
            .delta_min_value()
            .max(self.sigma_scale * max_std)
            + 2.5 * self.voxel_size;
        let mut fitted = self.clone();
        let origin = *fitted
            .origin
            .get_or_insert([lo.x - pad, lo.y - pad, lo.z - pad]);
        if fitted.dims.is_none() {
            let mut dims = [0usize; 3];
            for a in 0..3 {
                let span = hi[a] + pad - origin[a];
                dims[a] = (span / self.voxel_size).ceil().max(1.0) as usize + 1;
            }
            fitted.dims = Some(dims);
        }
        fitted.validate()?;
        Ok(fitted)
    }
}

/// Dense truncated-signed-distance volume with per-voxel uncertainty and
/// color. Distances are dimensionless in `[-1, 1]` (signed distance over the
/// truncation half-width); uncertainty is in scene units.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    config: VolumeConfig,
    dims: [usize; 3],
    origin: Vector3<f64>,
    pub(crate) d: Vec<f64>,
    pub(crate) sigma: Vec<f64>,
    pub(crate) color: Vec<[f32; 3]>,
    pub(crate) observed: Vec<bool>,
}

/// One application of the incremental fusion rule. Returns the updated
/// `(distance, sigma)` and the blend ratio used.
pub(crate) fn fuse_step(
    d_old: f64,
    sigma_old: f64,
    d_new: f64,
    s_new: f64,
    c1: f64,
    c2: f64,
) -> (f64, f64, f64) {
    let s2 = s_new * s_new;
    let denom = s2 + sigma_old * sigma_old;
    let ratio = if denom > 0.0 { s2 / denom } else { 0.5 };
    let r = ratio.clamp(c1, c2);
    let d = r * d_old + (1.0 - r) * d_new;
    let sigma = (r * sigma_old + (1.0 - r) * s_new).max(SIGMA_FLOOR);
    (d, sigma, r)
}

impl TsdfVolume {
    /// Allocate an empty volume. The config must carry explicit bounds; use
    /// [`VolumeConfig::fit_frustum`] first when they are unset.
    pub fn new(config: VolumeConfig) -> Result<Self> {
        config.validate()?;
        let (dims, origin) = match (config.dims, config.origin) {
            (Some(d), Some(o)) => (d, Vector3::new(o[0], o[1], o[2])),
            _ => {
                return Err(Error::InvalidInput(
                    "volume bounds unset; fit them to a frame first".into(),
                ))
            }
        };
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidInput(format!("volume {dims:?} overflows")))?;
        Ok(Self {
            config,
            dims,
            origin,
            d: vec![0.0; n],
            sigma: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            observed: vec![false; n],
        })
    }

    pub fn config(&self) -> &VolumeConfig {
        &self.config
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn voxel_count(&self) -> usize {
        self.d.len()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        self.origin + self.config.voxel_size * Vector3::new(x as f64, y as f64, z as f64)
    }

    pub fn is_observed(&self, x: usize, y: usize, z: usize) -> bool {
        self.observed[self.index(x, y, z)]
    }

    pub fn distance_at(&self, x: usize, y: usize, z: usize) -> Option<f64> {
        let i = self.index(x, y, z);
        self.observed[i].then(|| self.d[i])
    }

    pub fn sigma_at(&self, x: usize, y: usize, z: usize) -> Option<f64> {
        let i = self.index(x, y, z);
        self.observed[i].then(|| self.sigma[i])
    }

    pub fn color_at(&self, x: usize, y: usize, z: usize) -> Option<[f32; 3]> {
        let i = self.index(x, y, z);
        self.observed[i].then(|| self.color[i])
    }

    /// Continuous grid coordinates of a world point (voxel (0,0,0) at 0).
    pub fn world_to_grid(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.origin) / self.config.voxel_size
    }

    /// Trilinearly interpolated distance at a world point. `None` outside
    /// the voxel-center hull or when any of the 8 surrounding voxels is
    /// unobserved; at the hull boundary the cell clamps inward so exact
    /// border points still sample.
    pub fn sample_distance(&self, p: &Vector3<f64>) -> Option<f64> {
        let g = self.world_to_grid(p);
        let [nx, ny, nz] = self.dims;
        if !(g.x >= 0.0 && g.x <= (nx - 1) as f64)
            || !(g.y >= 0.0 && g.y <= (ny - 1) as f64)
            || !(g.z >= 0.0 && g.z <= (nz - 1) as f64)
        {
            return None;
        }
        let x0 = g.x.floor() as usize;
        let y0 = g.y.floor() as usize;
        let z0 = g.z.floor() as usize;
        let x1 = (x0 + 1).min(nx - 1);
        let y1 = (y0 + 1).min(ny - 1);
        let z1 = (z0 + 1).min(nz - 1);
        let fx = g.x - x0 as f64;
        let fy = g.y - y0 as f64;
        let fz = g.z - z0 as f64;
        let mut acc = 0.0;
        for (zc, wz) in [(z0, 1.0 - fz), (z1, fz)] {
            for (yc, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xc, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    let i = self.index(xc, yc, zc);
                    if !self.observed[i] {
                        return None;
                    }
                    acc += wz * wy * wx * self.d[i];
                }
            }
        }
        Some(acc)
    }

    /// Integrate one scale-consistent depth frame.
    ///
    /// Every voxel center is projected into the frame; voxels that fall on a
    /// valid depth sample within the adaptive truncation band are updated
    /// independently (first observation initializes directly, later ones
    /// blend). Voxels more than one band behind the observed surface keep
    /// their state. Without a color image, fused colors stay mid-gray.
    pub fn integrate_frame(
        &mut self,
        depth: &DepthMap,
        color: Option<&ColorImage>,
        pose: &Pose,
        intr: &CameraIntrinsics,
    ) -> Result<()> {
        if depth.width() != intr.width || depth.height() != intr.height {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} does not match intrinsics {}x{}",
                depth.width(),
                depth.height(),
                intr.width,
                intr.height
            )));
        }
        if let Some(img) = color {
            if img.width() != intr.width || img.height() != intr.height {
                return Err(Error::DimensionMismatch(format!(
                    "color {}x{} does not match intrinsics {}x{}",
                    img.width(),
                    img.height(),
                    intr.width,
                    intr.height
                )));
            }
        }
        let rot_cw = pose.rotation().inverse().to_rotation_matrix();
        let cam_center = *pose.translation();
        let (fx, fy, cx, cy) = (intr.fx, intr.fy, intr.cx, intr.cy);
        let delta_min = self.config.delta_min_value();
        let (sigma_scale, c1, c2) = (self.config.sigma_scale, self.config.c1, self.config.c2);
        let vs = self.config.voxel_size;
        let [nx, ny] = [self.dims[0], self.dims[1]];
        let origin = self.origin;

        self.d
            .par_iter_mut()
            .zip(self.sigma.par_iter_mut())
            .zip(self.color.par_iter_mut())
            .zip(self.observed.par_iter_mut())
            .enumerate()
            .for_each(|(i, (((dist, sigma), rgb), observed))| {
                let x = i % nx;
                let y = (i / nx) % ny;
                let z = i / (nx * ny);
                let world =
                    origin + vs * Vector3::new(x as f64, y as f64, z as f64);
                let cam = rot_cw * (world - cam_center);
                if cam.z <= 0.0 {
                    return;
                }
                let u = fx * cam.x / cam.z + cx;
                let v = fy * cam.y / cam.z + cy;
                let Some((mean, std)) = depth.sample_mean_std(u, v) else {
                    return;
                };
                let sdf = mean - cam.z;
                let delta_p = delta_min.max(sigma_scale * std);
                // Keep voxels down to one band behind the surface. The
                // relative slack keeps a voxel sitting exactly on the band
                // edge included when rounding nudges it past the boundary.
                if sdf < -delta_p * (1.0 + 1e-9) {
                    return;
                }
                let d_new = (sdf / delta_p).clamp(-1.0, 1.0);
                let s_new = std.max(SIGMA_FLOOR);
                let sample_rgb = color.and_then(|img| img.sample(u, v)).unwrap_or([0.5; 3]);
                if *observed {
                    let (d, s, r) = fuse_step(*dist, *sigma, d_new, s_new, c1, c2);
                    *dist = d;
                    *sigma = s;
                    let rf = r as f32;
                    for ch in 0..3 {
                        rgb[ch] = rf * rgb[ch] + (1.0 - rf) * sample_rgb[ch];
                    }
                } else {
                    *dist = d_new;
                    *sigma = s_new;
                    *rgb = sample_rgb;
                    *observed = true;
                }
            });
        Ok(())
    }

    /// Overwrite the whole volume from an analytic signed-distance function
    /// (positive outside). Useful for oracles and benchmarks. Distances are
    /// truncated to `[-1, 1]` over `truncation`; every voxel is marked
    /// observed with the given uncertainty and a mid-gray color.
    pub fn fill_from_sdf<F>(&mut self, sdf: F, truncation: f64, std: f64) -> Result<()>
    where
        F: Fn(&Vector3<f64>) -> f64 + Sync,
    {
        if !(truncation.is_finite() && truncation > 0.0) {
            return Err(Error::InvalidInput(format!(
                "truncation must be positive, got {truncation}"
            )));
        }
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::InvalidInput(format!("bad uncertainty {std}")));
        }
        let vs = self.config.voxel_size;
        let [nx, ny] = [self.dims[0], self.dims[1]];
        let origin = self.origin;
        let s = std.max(SIGMA_FLOOR);
        self.d
            .par_iter_mut()
            .zip(self.sigma.par_iter_mut())
            .zip(self.color.par_iter_mut())
            .zip(self.observed.par_iter_mut())
            .enumerate()
            .for_each(|(i, (((dist, sigma), rgb), observed))| {
                let x = i % nx;
                let y = (i / nx) % ny;
                let z = i / (nx * ny);
                let world = origin + vs * Vector3::new(x as f64, y as f64, z as f64);
                *dist = (sdf(&world) / truncation).clamp(-1.0, 1.0);
                *sigma = s;
                *rgb = [0.5; 3];
                *observed = true;
            });
        Ok(())
    }
}
