//! Synthetic ground-truth scenes: analytic SDF cavities, rendered depth,
//! noise injection, and corruption. Stands in for the endoscope, the depth
//! network, and SfM so every stage downstream can be tested against an
//! oracle that knows the true surface and trajectory.

mod render;
mod sequence;

pub use render::{render_depth, trajectory_poses};
pub use sequence::{corrupt_sequence, make_sequence, surface_samples, CorruptKind};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic scene building block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => {
                (p - Vector3::from(*center)).norm() - radius
            }
            Primitive::Capsule { a, b, radius } => {
                let a = Vector3::from(*a);
                let b = Vector3::from(*b);
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 {
                    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (p - (a + t * ab)).norm() - radius
            }
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Primitive::Sphere { radius, .. } | Primitive::Capsule { radius, .. } => *radius,
        }
    }

    /// Surface area, used for area-proportional sampling.
    pub fn surface_area(&self) -> f64 {
        match self {
            Primitive::Sphere { radius, .. } => {
                4.0 * std::f64::consts::PI * radius * radius
            }
            Primitive::Capsule { a, b, radius } => {
                let len = (Vector3::from(*b) - Vector3::from(*a)).norm();
                4.0 * std::f64::consts::PI * radius * radius
                    + 2.0 * std::f64::consts::PI * radius * len
            }
        }
    }
}

/// Analytic scene: a union of primitives, optionally negated so the camera
/// lives inside (endoscopy-style cavity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// When set, free space is the *interior* of the union and the camera
    /// films the walls from inside.
    pub cavity: bool,
    /// Characteristic scene size, in scene units; noise fractions and
    /// tracing tolerances scale with it.
    pub diameter: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidInput("scene needs at least one primitive".into()));
        }
        for p in &self.primitives {
            if !(p.radius().is_finite() && p.radius() > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "primitive radius {} not positive",
                    p.radius()
                )));
            }
        }
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(Error::InvalidInput(format!(
                "scene diameter {} not positive",
                self.diameter
            )));
        }
        Ok(())
    }

    /// Signed distance to the scene surface: positive in free space
    /// (wherever the camera may be), negative inside solid matter.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let union = self
            .primitives
            .iter()
            .map(|prim| prim.sdf(p))
            .fold(f64::INFINITY, f64::min);
        if self.cavity {
            -union
        } else {
            union
        }
    }
}

/// How the reported per-pixel std relates to the actually injected noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Reported std equals the injected noise model's std exactly.
    #[default]
    Exact,
    /// Reported std is the true std times `std_inflation`.
    Inflated,
    /// Reported std is a per-frame constant unrelated to the actual
    /// per-pixel error (a miscalibrated network).
    Misreported,
}

/// Noise model applied when turning ground truth into a synthetic bundle.
/// All magnitudes default to zero, i.e. the bundle reproduces the ground
/// truth bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Multiplicative depth noise: mean = truth · (1 + frac · N(0,1)), so
    /// the injected std is `frac · truth` per pixel.
    pub depth_noise_frac: f64,
    pub std_mode: StdMode,
    /// Multiplier for [`StdMode::Inflated`].
    pub std_inflation: f64,
    /// Floor on the reported std as a fraction of the true depth. Keeps
    /// losses that divide by the std well-conditioned when the injected
    /// noise is zero but a nonzero confidence is wanted.
    pub std_floor_frac: f64,
    /// Rotation noise on every pose: exact angle in degrees about a random
    /// axis.
    pub pose_rotation_deg: f64,
    /// Translation noise on every pose: exact length as a fraction of the
    /// scene diameter, random direction.
    pub pose_translation_frac: f64,
    /// Gaussian pixel noise on the target side of each match.
    pub match_pixel_std: f64,
    /// Fraction of matches displaced by 6–15 px (gross outliers).
    pub match_outlier_frac: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            depth_noise_frac: 0.0,
            std_mode: StdMode::Exact,
            std_inflation: 2.0,
            std_floor_frac: 0.0,
            pose_rotation_deg: 0.0,
            pose_translation_frac: 0.0,
            match_pixel_std: 0.0,
            match_outlier_frac: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let mags = [
            self.depth_noise_frac,
            self.std_inflation,
            self.std_floor_frac,
            self.pose_rotation_deg,
            self.pose_translation_frac,
            self.match_pixel_std,
            self.match_outlier_frac,
        ];
        if mags.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidInput("noise magnitudes must be >= 0".into()));
        }
        if self.match_outlier_frac > 1.0 || self.std_floor_frac > 1.0 {
            return Err(Error::InvalidInput("noise fractions must be <= 1".into()));
        }
        Ok(())
    }
}

/// Camera path: a Catmull-Rom spline through `control`, with a seeded
/// lateral wobble; the camera looks along its direction of motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub control: Vec<[f64; 3]>,
    /// Lateral wobble amplitude as a fraction of the scene diameter.
    pub wobble_frac: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            control: vec![[-0.2, 0.0, 0.0], [0.2, 0.0, 0.0]],
            wobble_frac: 0.04,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.control.is_empty() {
            return Err(Error::InvalidInput("trajectory needs control points".into()));
        }
        if self.control.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite control point".into()));
        }
        if !(self.wobble_frac.is_finite() && self.wobble_frac >= 0.0) {
            return Err(Error::InvalidInput("wobble must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sizes and densities for synthetic sequence generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub frames: usize,
    /// Sparse SfM anchors per frame.
    pub sparse_per_frame: usize,
    /// Feature matches generated per frame pair.
    pub matches_per_pair: usize,
    /// Frame-index gaps that get matches.
    pub match_intervals: Vec<usize>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            frames: 60,
            sparse_per_frame: 200,
            matches_per_pair: 100,
            match_intervals: vec![5, 6, 7, 8],
        }
    }
}

impl SynthSettings {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidInput("need at least one frame".into()));
        }
        if self.match_intervals.iter().any(|&i| i == 0) {
            return Err(Error::InvalidInput("match interval 0 is not a pair".into()));
        }
        Ok(())
    }
}

/// Ready-made scenes.
pub mod presets {
    use super::*;

    /// A peanut-shaped cavity of diameter about one scene unit — a tube
    /// with bulged ends, filmed from inside along its axis.
    pub fn cavity(seed: u64) -> (SceneSpec, TrajectorySpec) {
        let scene = SceneSpec {
            primitives: vec![
                Primitive::Capsule {
                    a: [-0.28, 0.0, 0.0],
                    b: [0.28, 0.0, 0.0],
                    radius: 0.20,
                },
                Primitive::Sphere {
                    center: [-0.28, 0.0, 0.0],
                    radius: 0.24,
                },
                Primitive::Sphere {
                    center: [0.28, 0.0, 0.0],
                    radius: 0.24,
                },
            ],
            cavity: true,
            diameter: 1.0,
            seed,
        };
        let trajectory = TrajectorySpec {
            control: vec![[-0.24, 0.0, 0.0], [0.0, 0.02, 0.0], [0.24, 0.0, 0.0]],
            wobble_frac: 0.04,
        };
        (scene, trajectory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_sdf_is_distance_to_shell() {
        let s = Primitive::Sphere {
            center: [1.0, 0.0, 0.0],
            radius: 0.5,
        };
        assert!((s.sdf(&Vector3::new(2.0, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert!((s.sdf(&Vector3::new(1.0, 0.0, 0.0)) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn capsule_sdf_handles_ends_and_middle() {
        let c = Primitive::Capsule {
            a: [0.0, 0.0, 0.0],
            b: [1.0, 0.0, 0.0],
            radius: 0.25,
        };
        // Beside the middle of the axis.
        assert!((c.sdf(&Vector3::new(0.5, 1.0, 0.0)) - 0.75).abs() < 1e-12);
        // Beyond an endpoint.
        assert!((c.sdf(&Vector3::new(-1.0, 0.0, 0.0)) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cavity_flips_the_sign() {
        let (scene, _) = presets::cavity(0);
        // The center of the tube is free space for the camera.
        assert!(scene.sdf(&Vector3::zeros()) > 0.1);
        // Far outside the tube is "solid" as far as the cavity is concerned.
        assert!(scene.sdf(&Vector3::new(5.0, 0.0, 0.0)) < 0.0);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = presets::cavity(0).0;
        spec.primitives.clear();
        assert!(spec.validate().is_err());

        let mut noise = NoiseSpec::default();
        noise.match_outlier_frac = 1.5;
        assert!(noise.validate().is_err());

        let mut synth = SynthSettings::default();
        synth.match_intervals = vec![0];
        assert!(synth.validate().is_err());
    }

    #[test]
    fn scene_spec_serializes_round_trip() {
        let (scene, _) = presets::cavity(17);
        let json = serde_json::to_string(&scene).unwrap();
        let back: SceneSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(scene, back);
    }
}
