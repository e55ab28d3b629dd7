//! Full synthetic sequences: noisy depth, sparse anchors, feature matches,
//! pose perturbations, and controlled corruptions for failure-path testing.

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, UnitSphere};

use crate::bundle::{FrameBundle, GroundTruth, SequenceBundle};
use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, ColorImage, DepthMap, FeatureMatch, FeatureMatchSet, Grid, Pose,
    SparseDepth,
};
use crate::synth::render::pick_orthogonal;
use crate::synth::{
    render_depth, trajectory_poses, NoiseSpec, Primitive, SceneSpec, StdMode, SynthSettings,
    TrajectorySpec,
};

/// Minimum camera clearance from the surface, as a fraction of the scene
/// diameter. Closer than this and the generated views degenerate.
const MIN_CLEARANCE_FRAC: f64 = 0.03;

/// Outlier matches land this many pixels away from the true correspondence,
/// uniformly drawn. The lower bound keeps them cleanly separable from
/// inlier jitter.
const OUTLIER_RANGE_PX: (f64, f64) = (6.0, 15.0);

/// Relative depth agreement required to accept a projected correspondence;
/// rejects points occluded in the second view.
const OCCLUSION_TOL_FRAC: f64 = 0.01;

/// Generate a complete synthetic sequence.
///
/// All randomness derives from `scene.seed` through a single counter-based
/// generator, so equal inputs give bitwise-equal bundles. The returned
/// bundle carries the clean poses and depths in `ground_truth`; with an
/// all-zero [`NoiseSpec`] the per-frame data is bitwise identical to it.
pub fn make_sequence(
    scene: &SceneSpec,
    traj: &TrajectorySpec,
    noise: &NoiseSpec,
    settings: &SynthSettings,
    intr: &CameraIntrinsics,
) -> Result<SequenceBundle> {
    scene.validate()?;
    noise.validate()?;
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let gt_poses = trajectory_poses(traj, scene.diameter, settings.frames, &mut rng)?;
    for (i, p) in gt_poses.iter().enumerate() {
        if scene.sdf(p.translation()) < MIN_CLEARANCE_FRAC * scene.diameter {
            return Err(Error::TrajectoryOutOfBounds { frame: i });
        }
    }
    let truths: Vec<DepthMap> = gt_poses
        .iter()
        .map(|p| render_depth(scene, p, intr))
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(settings.frames);
    for (i, truth) in truths.iter().enumerate() {
        let depth = noisy_depth(truth, noise, &mut rng)?;
        let sparse = pick_sparse(truth, settings.sparse_per_frame, &mut rng);
        let color = procedural_color(scene, truth, &gt_poses[i], intr);
        frames.push(FrameBundle {
            frame_id: i,
            depth,
            color: Some(color),
            sparse,
            pose: gt_poses[i],
        });
    }

    let matches = project_matches(&truths, &gt_poses, intr, noise, settings, &mut rng);

    // Pose noise comes last so the match/depth streams are unaffected by
    // toggling it.
    if noise.pose_rotation_deg > 0.0 || noise.pose_translation_frac > 0.0 {
        for f in frames.iter_mut() {
            f.pose = perturb_pose(
                &f.pose,
                noise.pose_rotation_deg.to_radians(),
                noise.pose_translation_frac * scene.diameter,
                &mut rng,
            );
        }
    }

    let bundle = SequenceBundle {
        intrinsics: *intr,
        frames,
        matches,
        ground_truth: Some(GroundTruth {
            poses: gt_poses,
            depths: truths,
            scene: scene.clone(),
        }),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Multiplicative per-pixel depth noise plus the reported-uncertainty model.
///
/// With `depth_noise_frac` f, a valid pixel of true depth t becomes
/// `t·(1 + f·g)`, g standard normal, clamped to stay above `0.05·t`. The
/// injected standard deviation is `f·t`; what the map *reports* depends on
/// the mode: the truth, an inflated copy, or a per-frame constant that is
/// uncorrelated with the actual pixel error.
fn noisy_depth<R: Rng>(truth: &DepthMap, noise: &NoiseSpec, rng: &mut R) -> Result<DepthMap> {
    let f = noise.depth_noise_frac;
    if f == 0.0 && noise.std_floor_frac == 0.0 {
        return Ok(truth.clone());
    }
    let (w, h) = (truth.width(), truth.height());
    let mut sum = 0.0;
    let mut n = 0usize;
    for (u, v, &ok) in truth.valid().iter_pixels() {
        if ok {
            sum += *truth.mean().get(u, v);
            n += 1;
        }
    }
    let frame_mean = if n > 0 { sum / n as f64 } else { 0.0 };

    let mut mean = Grid::new_fill(w, h, 0.0);
    let mut std = Grid::new_fill(w, h, 0.0);
    for v in 0..h {
        for u in 0..w {
            if !truth.is_valid(u, v) {
                continue;
            }
            let t = *truth.mean().get(u, v);
            let m = if f > 0.0 {
                let g: f64 = rng.sample(StandardNormal);
                (t * (1.0 + f * g)).max(0.05 * t)
            } else {
                t
            };
            let s = match noise.std_mode {
                StdMode::Exact => f * t,
                StdMode::Inflated => noise.std_inflation * f * t,
                StdMode::Misreported => f * frame_mean,
            };
            mean.set(u, v, m);
            std.set(u, v, s.max(noise.std_floor_frac * t));
        }
    }
    DepthMap::new(mean, std, truth.valid().clone())
}

/// Pick up to `count` distinct valid pixels and anchor them at the *true*
/// depth — these stand in for SfM triangulations, which are metrically
/// trustworthy where they exist.
fn pick_sparse<R: Rng>(truth: &DepthMap, count: usize, rng: &mut R) -> SparseDepth {
    let mut pixels: Vec<(usize, usize)> = Vec::new();
    for v in 0..truth.height() {
        for u in 0..truth.width() {
            if truth.is_valid(u, v) {
                pixels.push((u, v));
            }
        }
    }
    let k = count.min(pixels.len());
    for i in 0..k {
        let j = rng.random_range(i..pixels.len());
        pixels.swap(i, j);
    }
    let mut sparse = SparseDepth::empty(truth.width(), truth.height());
    for &(u, v) in &pixels[..k] {
        sparse
            .insert(u, v, *truth.mean().get(u, v))
            .expect("true depth at a valid pixel is positive");
    }
    sparse
}

/// Deterministic world-position-keyed texture, so photometric data exists
/// without an RNG and re-renders identically from any view of the same
/// surface point.
fn procedural_color(
    scene: &SceneSpec,
    truth: &DepthMap,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> ColorImage {
    let mut img = ColorImage::new_fill(intr.width, intr.height, [128, 128, 128]);
    let quant = |x: f64| ((0.5 + 0.45 * x).clamp(0.0, 1.0) * 255.0).round() as u8;
    for v in 0..intr.height {
        for u in 0..intr.width {
            if !truth.is_valid(u, v) {
                continue;
            }
            let z = *truth.mean().get(u, v);
            let cam = intr.ray(u as f64, v as f64) * z;
            let p = pose.transform(&cam) / scene.diameter;
            img.set(
                u,
                v,
                [
                    quant((25.0 * p.x + 7.0 * p.y).sin()),
                    quant((21.0 * p.y + 9.0 * p.z).sin()),
                    quant((19.0 * p.z + 5.0 * p.x).sin()),
                ],
            );
        }
    }
    img
}

/// Correspondences built by projecting shared surface points between frame
/// pairs at the configured temporal intervals. Occluded projections are
/// rejected by comparing the projected depth against the target frame's
/// true depth. A fraction of matches become gross outliers (displaced well
/// past any inlier); the rest get Gaussian pixel jitter.
fn project_matches<R: Rng>(
    truths: &[DepthMap],
    poses: &[Pose],
    intr: &CameraIntrinsics,
    noise: &NoiseSpec,
    settings: &SynthSettings,
    rng: &mut R,
) -> FeatureMatchSet {
    let mut set = FeatureMatchSet::empty();
    let n = truths.len();
    let valid_px: Vec<Vec<(usize, usize)>> = truths
        .iter()
        .map(|t| {
            let mut px = Vec::new();
            for v in 0..t.height() {
                for u in 0..t.width() {
                    if t.is_valid(u, v) {
                        px.push((u, v));
                    }
                }
            }
            px
        })
        .collect();

    for &interval in &settings.match_intervals {
        for j in 0..n.saturating_sub(interval) {
            let k = j + interval;
            if valid_px[j].is_empty() {
                continue;
            }
            let mut got = 0usize;
            let budget = settings.matches_per_pair * 20;
            for _ in 0..budget {
                if got >= settings.matches_per_pair {
                    break;
                }
                let (u, v) = valid_px[j][rng.random_range(0..valid_px[j].len())];
                let z = *truths[j].mean().get(u, v);
                let Ok(cam_j) = intr.unproject(u as f64, v as f64, z) else {
                    continue;
                };
                let world = poses[j].transform(&cam_j);
                let cam_k = poses[k].inverse_transform(&world);
                let Ok((uk, vk, zk)) = intr.project(&cam_k) else {
                    continue;
                };
                if !intr.in_sampling_domain(uk, vk) {
                    continue;
                }
                let Some((tk, _)) = truths[k].sample_mean_std(uk, vk) else {
                    continue;
                };
                if (zk - tk).abs() > OCCLUSION_TOL_FRAC * zk + 1e-6 {
                    continue;
                }
                let b = if noise.match_outlier_frac > 0.0
                    && rng.random::<f64>() < noise.match_outlier_frac
                {
                    let mut displaced = None;
                    for _ in 0..64 {
                        let r = rng.random_range(OUTLIER_RANGE_PX.0..OUTLIER_RANGE_PX.1);
                        let th = rng.random::<f64>() * std::f64::consts::TAU;
                        let (bu, bv) = (uk + r * th.cos(), vk + r * th.sin());
                        if intr.in_sampling_domain(bu, bv) {
                            displaced = Some([bu, bv]);
                            break;
                        }
                    }
                    match displaced {
                        Some(b) => b,
                        None => continue, // image too small to host an outlier here
                    }
                } else if noise.match_pixel_std > 0.0 {
                    let gx: f64 = rng.sample(StandardNormal);
                    let gy: f64 = rng.sample(StandardNormal);
                    [
                        (uk + noise.match_pixel_std * gx).clamp(0.0, (intr.width - 1) as f64),
                        (vk + noise.match_pixel_std * gy).clamp(0.0, (intr.height - 1) as f64),
                    ]
                } else {
                    [uk, vk]
                };
                set.push(FeatureMatch {
                    frame_a: j,
                    frame_b: k,
                    a: [u as f64, v as f64],
                    b,
                });
                got += 1;
            }
        }
    }
    set
}

/// Rotate by exactly `angle_rad` about a random axis and translate by
/// exactly `dist` in a random direction. Exact magnitudes make noise levels
/// directly checkable downstream.
fn perturb_pose<R: Rng>(pose: &Pose, angle_rad: f64, dist: f64, rng: &mut R) -> Pose {
    let mut rot = *pose.rotation();
    let mut t = *pose.translation();
    if angle_rad > 0.0 {
        let axis: [f64; 3] = rng.sample(UnitSphere);
        let dq =
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle_rad);
        rot = dq * rot;
    }
    if dist > 0.0 {
        let dir: [f64; 3] = rng.sample(UnitSphere);
        t += dist * Vector3::from(dir);
    }
    Pose::new(rot, t)
}

/// A deliberate way to break a bundle, for exercising failure detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptKind {
    /// Rotate every estimated pose by the magnitude in degrees (random axis
    /// per frame). Ground truth is untouched.
    PoseScramble,
    /// Scale depth means by a factor drifting linearly from `1 - m/2` at the
    /// first frame to `1 + m/2` at the last. Reported stds are untouched.
    DepthScaleDrift,
    /// Rewire the `b` endpoints of a `magnitude` fraction of matches within
    /// each frame pair, so they point at the wrong surface points.
    MatchShuffle,
}

impl FromStr for CorruptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose_scramble" => Ok(Self::PoseScramble),
            "depth_scale_drift" => Ok(Self::DepthScaleDrift),
            "match_shuffle" => Ok(Self::MatchShuffle),
            other => Err(Error::UnknownSelector(other.into())),
        }
    }
}

impl CorruptKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PoseScramble => "pose_scramble",
            Self::DepthScaleDrift => "depth_scale_drift",
            Self::MatchShuffle => "match_shuffle",
        }
    }
}

/// Apply one corruption at the given magnitude. Magnitude zero returns the
/// bundle unchanged (no RNG is consumed). Ground truth, when present, is
/// never modified — corruption models estimation error, not reality.
pub fn corrupt_sequence(
    bundle: &SequenceBundle,
    kind: CorruptKind,
    magnitude: f64,
    seed: u64,
) -> Result<SequenceBundle> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "corruption magnitude must be finite and non-negative, got {magnitude}"
        )));
    }
    let mut out = bundle.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        CorruptKind::PoseScramble => {
            for f in out.frames.iter_mut() {
                let axis: [f64; 3] = rng.sample(UnitSphere);
                let dq = UnitQuaternion::from_axis_angle(
                    &Unit::new_normalize(Vector3::from(axis)),
                    magnitude.to_radians(),
                );
                f.pose = Pose::new(dq * f.pose.rotation(), *f.pose.translation());
            }
        }
        CorruptKind::DepthScaleDrift => {
            let n = out.frames.len();
            for (j, f) in out.frames.iter_mut().enumerate() {
                let s = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.5 };
                let factor = 1.0 + magnitude * (s - 0.5);
                if factor <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "drift magnitude {magnitude} collapses frame {j} to scale {factor}"
                    )));
                }
                for m in f.depth.mean_mut().as_mut_slice() {
                    *m *= factor;
                }
            }
        }
        CorruptKind::MatchShuffle => {
            let mut all: Vec<FeatureMatch> = out.matches.iter().copied().collect();
            let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for (i, m) in all.iter().enumerate() {
                groups.entry((m.frame_a, m.frame_b)).or_default().push(i);
            }
            for (_, mut idx) in groups {
                if idx.len() < 2 {
                    continue;
                }
                let m = ((magnitude * idx.len() as f64).ceil() as usize)
                    .max(2)
                    .min(idx.len());
                for i in 0..m {
                    let j = rng.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                // Cyclic rotation of the b endpoints guarantees every
                // selected match receives a different match's endpoint.
                let first_b = all[idx[0]].b;
                for w in 0..m - 1 {
                    all[idx[w]].b = all[idx[w + 1]].b;
                }
                all[idx[m - 1]].b = first_b;
            }
            out.matches = FeatureMatchSet::new(all)?;
        }
    }
    Ok(out)
}

/// Draw `count` points uniformly (by area) on the scene's surface shell.
///
/// Candidates are drawn on individual primitives area-proportionally, then
/// rejected where another primitive swallows them, so the result follows
/// the *union* boundary — exactly the surface depth cameras can see.
pub fn surface_samples(scene: &SceneSpec, count: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
    scene.validate()?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = scene.primitives.iter().map(|p| p.surface_area()).collect();
    let mut cum = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cum.push(acc);
    }
    let tol = 1e-7 * scene.diameter;
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(100);
    for _ in 0..budget {
        if out.len() >= count {
            break;
        }
        let x = rng.random::<f64>() * acc;
        let pi = cum.partition_point(|&c| c <= x).min(areas.len() - 1);
        let p = sample_on_primitive(&scene.primitives[pi], &mut rng);
        if scene.sdf(&p).abs() < tol {
            out.push(p);
        }
    }
    if out.len() < count {
        return Err(Error::DegenerateInput(format!(
            "only {} of {count} surface samples landed on the visible shell",
            out.len()
        )));
    }
    Ok(out)
}

/// Uniform point on one primitive's own surface (ignoring the union).
fn sample_on_primitive<R: Rng>(prim: &Primitive, rng: &mut R) -> Vector3<f64> {
    use std::f64::consts::{PI, TAU};
    match prim {
        Primitive::Sphere { center, radius } => {
            let d: [f64; 3] = rng.sample(UnitSphere);
            Vector3::from(*center) + *radius * Vector3::from(d)
        }
        Primitive::Capsule { a, b, radius } => {
            let a = Vector3::from(*a);
            let b = Vector3::from(*b);
            let axis = b - a;
            let len = axis.norm();
            let lateral = TAU * radius * len;
            let caps = 4.0 * PI * radius * radius;
            if len > 0.0 && rng.random::<f64>() * (lateral + caps) < lateral {
                let axis_n = axis / len;
                let e1 = pick_orthogonal(&axis_n);
                let e2 = axis_n.cross(&e1);
                let s = rng.random::<f64>();
                let th = rng.random::<f64>() * TAU;
                a + s * axis + *radius * (th.cos() * e1 + th.sin() * e2)
            } else {
                let d: [f64; 3] = rng.sample(UnitSphere);
                let dv = Vector3::from(d);
                let end = if len > 0.0 && dv.dot(&axis) > 0.0 { b } else { a };
                end + *radius * dv
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::presets;

    fn small_intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(55.0, 55.0, 64, 48).unwrap()
    }

    fn quick_settings() -> SynthSettings {
        SynthSettings {
            frames: 8,
            sparse_per_frame: 50,
            matches_per_pair: 30,
            match_intervals: vec![3],
        }
    }

    #[test]
    fn zero_noise_bundle_is_bitwise_ground_truth() {
        let (scene, traj) = presets::cavity(11);
        let bundle = make_sequence(
            &scene,
            &traj,
            &NoiseSpec::default(),
            &quick_settings(),
            &small_intr(),
        )
        .unwrap();
        let gt = bundle.ground_truth.as_ref().unwrap();
        for (f, (gp, gd)) in bundle.frames.iter().zip(gt.poses.iter().zip(&gt.depths)) {
            assert_eq!(f.depth, *gd);
            assert_eq!(f.pose.xyzw(), gp.xyzw());
            assert_eq!(f.pose.translation(), gp.translation());
            for (u, v, d) in f.sparse.iter() {
                assert_eq!(d, *gd.mean().get(u, v));
            }
        }
    }

    #[test]
    fn two_percent_noise_spreads_by_two_percent() {
        let (scene, traj) = presets::cavity(29);
        let noise = NoiseSpec {
            depth_noise_frac: 0.02,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: 30,
            sparse_per_frame: 10,
            matches_per_pair: 0,
            match_intervals: vec![],
        };
        let intr = CameraIntrinsics::centered(60.0, 60.0, 80, 60).unwrap();
        let bundle = make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap();
        let gt = bundle.ground_truth.as_ref().unwrap();
        let mut residuals = Vec::new();
        for (f, gd) in bundle.frames.iter().zip(&gt.depths) {
            for (u, v, &ok) in f.depth.valid().iter_pixels() {
                if ok {
                    let t = *gd.mean().get(u, v);
                    residuals.push(*f.depth.mean().get(u, v) / t - 1.0);
                    // Exact mode must report the injected std.
                    assert_eq!(*f.depth.std().get(u, v), 0.02 * t);
                }
            }
        }
        assert!(
            residuals.len() >= 100_000,
            "need a large sample, got {}",
            residuals.len()
        );
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / residuals.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - 0.02).abs() < 0.002,
            "empirical noise std {std}, wanted 0.02 +/- 10%"
        );
    }

    #[test]
    fn outlier_fraction_lands_near_requested() {
        let (scene, traj) = presets::cavity(7);
        let noise = NoiseSpec {
            match_outlier_frac: 0.10,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: 20,
            sparse_per_frame: 10,
            matches_per_pair: 100,
            match_intervals: vec![5, 6, 7, 8],
        };
        let bundle = make_sequence(&scene, &traj, &noise, &settings, &small_intr()).unwrap();
        let gt = bundle.ground_truth.as_ref().unwrap();
        let mut total = 0usize;
        let mut far = 0usize;
        for m in bundle.matches.iter() {
            let z = *gt.depths[m.frame_a].mean().get(m.a[0] as usize, m.a[1] as usize);
            let cam_a = bundle.intrinsics.unproject(m.a[0], m.a[1], z).unwrap();
            let world = gt.poses[m.frame_a].transform(&cam_a);
            let cam_b = gt.poses[m.frame_b].inverse_transform(&world);
            let (ub, vb, _) = bundle.intrinsics.project(&cam_b).unwrap();
            let d = ((m.b[0] - ub).powi(2) + (m.b[1] - vb).powi(2)).sqrt();
            total += 1;
            if d > 5.0 {
                far += 1;
                assert!(d < 15.5, "outlier displaced {d}px, beyond the design range");
            } else {
                assert!(d < 1e-9, "inlier with zero jitter should be exact, got {d}px");
            }
        }
        assert!(total >= 2000, "only {total} matches generated");
        let frac = far as f64 / total as f64;
        assert!(
            (frac - 0.10).abs() <= 0.02,
            "outlier fraction {frac}, wanted 0.10 +/- 0.02"
        );
    }

    #[test]
    fn same_seed_reproduces_the_bundle() {
        let (scene, traj) = presets::cavity(3);
        let noise = NoiseSpec {
            depth_noise_frac: 0.02,
            match_pixel_std: 0.5,
            pose_rotation_deg: 1.0,
            pose_translation_frac: 0.01,
            ..NoiseSpec::default()
        };
        let a = make_sequence(&scene, &traj, &noise, &quick_settings(), &small_intr()).unwrap();
        let b = make_sequence(&scene, &traj, &noise, &quick_settings(), &small_intr()).unwrap();
        assert_eq!(a, b);

        let mut other = scene.clone();
        other.seed = 4;
        let c = make_sequence(&other, &traj, &noise, &quick_settings(), &small_intr()).unwrap();
        assert_ne!(a.frames[0].depth, c.frames[0].depth);
    }

    #[test]
    fn pose_noise_has_exact_magnitude() {
        let (scene, traj) = presets::cavity(17);
        let noise = NoiseSpec {
            pose_rotation_deg: 2.0,
            pose_translation_frac: 0.02,
            ..NoiseSpec::default()
        };
        let bundle = make_sequence(&scene, &traj, &noise, &quick_settings(), &small_intr()).unwrap();
        let gt = bundle.ground_truth.as_ref().unwrap();
        for (f, gp) in bundle.frames.iter().zip(&gt.poses) {
            let ang = f.pose.rotation_angle_to(gp).to_degrees();
            assert!((ang - 2.0).abs() < 1e-9, "rotation noise {ang} deg");
            let d = f.pose.translation_distance_to(gp);
            assert!((d - 0.02 * scene.diameter).abs() < 1e-12, "translation noise {d}");
        }
    }

    #[test]
    fn bad_trajectory_is_reported_with_frame() {
        let (scene, _) = presets::cavity(1);
        let traj = TrajectorySpec {
            control: vec![[5.0, 0.0, 0.0], [6.0, 0.0, 0.0]],
            wobble_frac: 0.0,
        };
        let err = make_sequence(
            &scene,
            &traj,
            &NoiseSpec::default(),
            &quick_settings(),
            &small_intr(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TrajectoryOutOfBounds { frame: 0 }));
    }

    #[test]
    fn zero_magnitude_corruption_is_identity() {
        let (scene, traj) = presets::cavity(5);
        let bundle = make_sequence(
            &scene,
            &traj,
            &NoiseSpec::default(),
            &quick_settings(),
            &small_intr(),
        )
        .unwrap();
        for kind in [
            CorruptKind::PoseScramble,
            CorruptKind::DepthScaleDrift,
            CorruptKind::MatchShuffle,
        ] {
            let same = corrupt_sequence(&bundle, kind, 0.0, 99).unwrap();
            assert_eq!(same, bundle);
        }
    }

    #[test]
    fn pose_scramble_rotates_by_the_exact_angle() {
        let (scene, traj) = presets::cavity(5);
        let bundle = make_sequence(
            &scene,
            &traj,
            &NoiseSpec::default(),
            &quick_settings(),
            &small_intr(),
        )
        .unwrap();
        let bad = corrupt_sequence(&bundle, CorruptKind::PoseScramble, 3.0, 42).unwrap();
        for (orig, scr) in bundle.frames.iter().zip(&bad.frames) {
            let ang = orig.pose.rotation_angle_to(&scr.pose).to_degrees();
            assert!((ang - 3.0).abs() < 1e-9, "scramble angle {ang} deg");
            assert_eq!(orig.pose.translation(), scr.pose.translation());
        }
        // Ground truth must be untouched.
        assert_eq!(bundle.ground_truth, bad.ground_truth);
    }

    #[test]
    fn depth_drift_scales_linearly_across_frames() {
        let (scene, traj) = presets::cavity(5);
        let bundle = make_sequence(
            &scene,
            &traj,
            &NoiseSpec::default(),
            &quick_settings(),
            &small_intr(),
        )
        .unwrap();
        let bad = corrupt_sequence(&bundle, CorruptKind::DepthScaleDrift, 0.2, 0).unwrap();
        let n = bundle.frames.len();
        for (j, (orig, drifted)) in bundle.frames.iter().zip(&bad.frames).enumerate() {
            let factor = 1.0 + 0.2 * (j as f64 / (n - 1) as f64 - 0.5);
            for (u, v, &ok) in orig.depth.valid().iter_pixels() {
                if ok {
                    let expect = orig.depth.mean().get(u, v) * factor;
                    assert!((drifted.depth.mean().get(u, v) - expect).abs() < 1e-12);
                }
            }
            assert_eq!(orig.depth.std(), drifted.depth.std());
        }
    }

    #[test]
    fn match_shuffle_rewires_only_b_endpoints() {
        let (scene, traj) = presets::cavity(5);
        let bundle = make_sequence(
            &scene,
            &traj,
            &NoiseSpec::default(),
            &quick_settings(),
            &small_intr(),
        )
        .unwrap();
        assert!(bundle.matches.len() > 50);
        let bad = corrupt_sequence(&bundle, CorruptKind::MatchShuffle, 1.0, 7).unwrap();
        assert_eq!(bundle.matches.len(), bad.matches.len());
        let mut moved = 0usize;
        for (orig, shuf) in bundle.matches.iter().zip(bad.matches.iter()) {
            assert_eq!(orig.a, shuf.a);
            assert_eq!((orig.frame_a, orig.frame_b), (shuf.frame_a, shuf.frame_b));
            if orig.b != shuf.b {
                moved += 1;
            }
        }
        assert!(
            moved as f64 >= 0.9 * bundle.matches.len() as f64,
            "only {moved} of {} endpoints moved",
            bundle.matches.len()
        );
    }

    #[test]
    fn unknown_corruption_name_is_rejected() {
        let err = CorruptKind::from_str("motion_blur").unwrap_err();
        assert!(matches!(err, Error::UnknownSelector(_)));
        assert_eq!(
            CorruptKind::from_str("depth_scale_drift").unwrap(),
            CorruptKind::DepthScaleDrift
        );
    }

    #[test]
    fn surface_samples_stick_to_the_shell() {
        let (scene, _) = presets::cavity(13);
        let pts = surface_samples(&scene, 2000, 13).unwrap();
        assert_eq!(pts.len(), 2000);
        for p in &pts {
            assert!(scene.sdf(p).abs() < 1e-7 * scene.diameter);
        }
        // Both lobes of the peanut get covered.
        assert!(pts.iter().any(|p| p.x > 0.4));
        assert!(pts.iter().any(|p| p.x < -0.4));
        let again = surface_samples(&scene, 2000, 13).unwrap();
        assert_eq!(pts, again);
    }
}
