//! Rigid camera poses.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Camera-to-world rigid transform: `x_world = R * x_cam + t`.
///
/// Every pose in this crate, whether loaded, synthesized, or optimized, uses
/// this direction; nothing stores world-to-camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Build from raw scalar-last quaternion components as stored in
    /// trajectory files. The quaternion is kept bit-for-bit (no
    /// renormalization) so that read-write round-trips are exact; it must
    /// already be unit length to `tol`.
    pub fn from_xyzw(xyzw: [f64; 4], translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let q = Quaternion::new(xyzw[3], xyzw[0], xyzw[1], xyzw[2]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {norm} is not within {tol} of 1"
            )));
        }
        if !(translation.x.is_finite() && translation.y.is_finite() && translation.z.is_finite()) {
            return Err(Error::InvalidInput("non-finite translation".into()));
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(q),
            translation,
        })
    }

    /// Scalar-last quaternion components, exactly as stored.
    pub fn xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera frame to world frame.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World frame to camera frame.
    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(
                self.rotation.quaternion() * other.rotation.quaternion(),
            ),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// `self⁻¹ ∘ other`. With camera-to-world poses `T_k`, `T_j`, the result
    /// maps frame-`j` camera coordinates into frame-`k` camera coordinates
    /// when called as `t_k.inverse_compose(&t_j)`.
    pub fn inverse_compose(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Retraction used by the pose optimizer: a rotation increment `omega`
    /// (axis-angle, applied on the left, i.e. about the current camera
    /// center's orientation in world coordinates) and a translation increment
    /// `v` added directly.
    pub fn retract(&self, omega: &Vector3<f64>, v: &Vector3<f64>) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(
                UnitQuaternion::from_scaled_axis(*omega).quaternion() * self.rotation.quaternion(),
            ),
            translation: self.translation + v,
        }
    }

    /// Geodesic rotation distance in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}
