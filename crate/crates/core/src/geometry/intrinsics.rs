//! Pinhole camera model.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics with the pixel-center convention: pixel `(u, v)` sees
/// the ray through the point `(u, v)` of the continuous image plane, so a
/// `W x H` image covers `[-0.5, W-0.5] x [-0.5, H-0.5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput("non-finite intrinsics".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("zero image dimensions".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Symmetric intrinsics with the principal point at the image center.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Project a camera-frame point to image coordinates `(u, v)` and its
    /// depth (z-component). Fails for points at or behind the camera plane.
    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera { z: p.z });
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Ok((u, v, p.z))
    }

    /// Back-project the pixel `(u, v)` at `depth` (z-component, not ray
    /// length) to a camera-frame point.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ))
    }

    /// Unit-depth ray direction through pixel `(u, v)` in the camera frame.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// True when `(u, v)` lies inside the pixel-center sampling domain
    /// `[0, W-1] x [0, H-1]` used by bilinear lookups.
    pub fn in_sampling_domain(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= (self.width - 1) as f64 && v >= 0.0 && v <= (self.height - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn project_unit_offset() {
        let (u, v, z) = cam().project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(u, 100.0, max_relative = 1e-12);
        assert_relative_eq!(v, 50.0, max_relative = 1e-12);
        assert_relative_eq!(z, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn unproject_origin_pixel() {
        let c = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 2).unwrap();
        let p = c.unproject(0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(p.x, -0.5, max_relative = 1e-12);
        assert_relative_eq!(p.y, -0.5, max_relative = 1e-12);
        assert_relative_eq!(p.z, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn project_unproject_roundtrip() {
        let c = cam();
        let p = Vector3::new(-0.3, 0.7, 1.9);
        let (u, v, z) = c.project(&p).unwrap();
        let q = c.unproject(u, v, z).unwrap();
        assert_relative_eq!(p, q, max_relative = 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        assert!(matches!(
            cam().project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
        assert!(cam().unproject(10.0, 10.0, 0.0).is_err());
    }
}
