//! Point-cloud registration and residual-based evaluation.
//!
//! Reconstructions are scored by rigidly registering a sampled point cloud
//! against a reference cloud (ground-truth surface samples, or another
//! reconstruction) with point-to-point ICP and reporting closest-point
//! residual statistics. An optional uniform-scale mode absorbs global scale
//! drift, which monocular pipelines cannot observe.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, PointCloud, TriangleMesh};
use crate::tsdf::mesh_to_pointcloud;

/// Knobs for [`register`] / [`evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Approximate number of points sampled from a mesh before registering.
    pub target_count: usize,
    /// Also estimate a uniform scale (similarity instead of rigid).
    pub with_scale: bool,
    /// Iteration cap for the ICP loop.
    pub max_iterations: usize,
    /// Convergence threshold on the relative change of the mean squared
    /// residual between iterations.
    pub tolerance: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            target_count: 40_000,
            with_scale: false,
            max_iterations: 50,
            tolerance: 1e-6,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_count == 0 {
            return Err(Error::InvalidInput("target_count must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive and finite, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Closest-point residual summary after registration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub median: f64,
    pub rms: f64,
    pub max: f64,
    pub count: usize,
}

impl ResidualStats {
    /// Summarize a set of distances (not squared).
    pub fn from_distances(mut distances: Vec<f64>) -> Self {
        if distances.is_empty() {
            return Self::default();
        }
        let count = distances.len();
        let mean = distances.iter().sum::<f64>() / count as f64;
        let rms = (distances.iter().map(|d| d * d).sum::<f64>() / count as f64).sqrt();
        let max = distances.iter().fold(0.0f64, |a, &b| a.max(b));
        distances.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            distances[count / 2]
        } else {
            0.5 * (distances[count / 2 - 1] + distances[count / 2])
        };
        Self {
            mean,
            median,
            rms,
            max,
            count,
        }
    }
}

/// Result of one ICP run. On divergence the stats describe the state the
/// loop stopped in, not a converged alignment — `diverged` says so.
#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Rigid part of the fitted transform (applied after `scale`).
    pub transform: Pose,
    /// Uniform scale; exactly 1.0 unless scale mode is on.
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub stats: ResidualStats,
}

impl IcpResult {
    /// Map a source-cloud point through the fitted similarity.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.transform.rotation() * (self.scale * p) + self.transform.translation()
    }
}

/// Flags divergence: the mean squared residual growing on several
/// consecutive iterations. A single increase is ordinary (correspondence
/// flips after a refit), a run of them means the loop is walking away.
#[derive(Debug, Default)]
struct DivergenceGuard {
    prev: Option<f64>,
    consecutive: usize,
}

/// Increases tolerated before the loop is declared divergent.
const DIVERGENCE_RUN: usize = 5;

impl DivergenceGuard {
    /// Feed the next MSE; true once it has increased `DIVERGENCE_RUN` times
    /// in a row.
    fn observe(&mut self, mse: f64) -> bool {
        if let Some(prev) = self.prev {
            if mse > prev {
                self.consecutive += 1;
            } else {
                self.consecutive = 0;
            }
        }
        self.prev = Some(mse);
        self.consecutive >= DIVERGENCE_RUN
    }
}

/// Point-to-point ICP from `initial` (identity when absent): alternate
/// nearest-neighbor correspondence against `target` with a closed-form
/// refit, stopping on relative MSE change below `config.tolerance`, the
/// iteration cap, or divergence.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    initial: Option<&Pose>,
    config: &RegistrationConfig,
) -> Result<IcpResult> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput(
            "registration needs non-empty source and target clouds".into(),
        ));
    }
    let tree = KdTree::build(&target.points);

    let mut rotation = initial.map_or_else(UnitQuaternion::identity, |p| *p.rotation());
    let mut translation = initial.map_or_else(Vector3::zeros, |p| *p.translation());
    let mut scale = 1.0f64;

    let mut guard = DivergenceGuard::default();
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;
    let mut prev_mse: Option<f64> = None;

    for _ in 0..config.max_iterations {
        let matched: Vec<(Vector3<f64>, f64)> = source
            .points
            .par_iter()
            .map(|p| {
                let q = rotation * (scale * p) + translation;
                let (idx, d2) = tree.nearest(&q);
                (target.points[idx], d2)
            })
            .collect();
        let mse = matched.iter().map(|(_, d2)| d2).sum::<f64>() / matched.len() as f64;

        if let Some(prev) = prev_mse {
            if (prev - mse).abs() <= config.tolerance * prev.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if guard.observe(mse) {
            diverged = true;
            break;
        }
        prev_mse = Some(mse);

        let targets: Vec<Vector3<f64>> = matched.into_iter().map(|(q, _)| q).collect();
        let (s, r, t) = umeyama(&source.points, &targets, config.with_scale)?;
        scale = s;
        rotation = r;
        translation = t;
        iterations += 1;
    }

    let distances: Vec<f64> = source
        .points
        .par_iter()
        .map(|p| {
            let q = rotation * (scale * p) + translation;
            tree.nearest(&q).1.sqrt()
        })
        .collect();

    Ok(IcpResult {
        transform: Pose::new(rotation, translation),
        scale,
        iterations,
        converged,
        diverged,
        stats: ResidualStats::from_distances(distances),
    })
}

/// Score a reconstruction against a reference cloud: sample the mesh down
/// to roughly `config.target_count` points (seeded, so runs reproduce),
/// register, and report residual statistics.
pub fn evaluate(
    mesh: &TriangleMesh,
    reference: &PointCloud,
    initial: Option<&Pose>,
    config: &RegistrationConfig,
    seed: u64,
) -> Result<IcpResult> {
    let sampled = mesh_to_pointcloud(mesh, config.target_count, seed)?;
    register(&sampled, reference, initial, config)
}

/// Closed-form least-squares alignment of paired points: rotation,
/// translation, and optionally a uniform scale taking `src` onto `dst`.
/// The reflection guard flips the smallest singular direction when the
/// correspondence covariance has negative determinant.
fn umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<(f64, UnitQuaternion<f64>, Vector3<f64>)> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source points vs {} targets",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateInput(
            "alignment needs at least 3 point pairs".into(),
        ));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut src_var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let s0 = s - cs;
        let d0 = d - cd;
        cov += d0 * s0.transpose();
        src_var += s0.norm_squared();
    }
    cov /= n;
    src_var /= n;

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateInput("alignment SVD failed".into())),
    };
    let sign = (u * v_t).determinant().signum();
    let fix = Vector3::new(1.0, 1.0, sign);
    let r = u * Matrix3::from_diagonal(&fix) * v_t;
    let scale = if with_scale {
        if src_var <= 0.0 {
            return Err(Error::DegenerateInput(
                "scale estimation from coincident points".into(),
            ));
        }
        svd.singular_values.dot(&fix) / src_var
    } else {
        1.0
    };
    let rot = UnitQuaternion::from_matrix(&r);
    let t = cd - scale * (rot * cs);
    Ok((scale, rot, t))
}

/// Static 3-d tree over a point slice. Median splits on the widest axis,
/// with index tie-breaks, so construction and queries are deterministic
/// functions of the input order.
struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    nodes: Vec<KdNode>,
    root: i32,
}

struct KdNode {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order, &mut nodes);
        Self {
            points,
            nodes,
            root,
        }
    }

    fn build_rec(points: &[Vector3<f64>], order: &mut [u32], nodes: &mut Vec<KdNode>) -> i32 {
        if order.is_empty() {
            return -1;
        }
        let mut lo = points[order[0] as usize];
        let mut hi = lo;
        for &i in order.iter() {
            let p = points[i as usize];
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let extent = hi - lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ka = (points[a as usize][axis], a);
            let kb = (points[b as usize][axis], b);
            ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
        });
        let point = order[mid];
        let id = nodes.len() as i32;
        nodes.push(KdNode {
            point,
            axis: axis as u8,
            left: -1,
            right: -1,
        });
        let (left_slice, rest) = order.split_at_mut(mid);
        let left = Self::build_rec(points, left_slice, nodes);
        let right = Self::build_rec(points, &mut rest[1..], nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    /// Index and squared distance of the closest stored point.
    fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: i32, query: &Vector3<f64>, best: &mut (usize, f64)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = self.points[n.point as usize];
        let d2 = (query - p).norm_squared();
        if d2 < best.1 {
            *best = (n.point as usize, d2);
        }
        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, best);
        if delta * delta < best.1 {
            self.nearest_rec(far, query, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.25..0.25),
                )
            })
            .collect()
    }

    #[test]
    fn kdtree_agrees_with_brute_force() {
        let points = blob(500, 3);
        let tree = KdTree::build(&points);
        let queries = blob(100, 4);
        for q in &queries {
            let (ti, td2) = tree.nearest(q);
            let (bi, bd2) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (q - p).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(ti, bi);
            assert_eq!(td2, bd2);
        }
    }

    #[test]
    fn umeyama_recovers_an_exact_similarity() {
        let src = blob(40, 7);
        let rot = UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.2, 0.5));
        let t = Vector3::new(0.7, -1.1, 0.4);
        for (apply_scale, fit_scale) in [(1.0, false), (1.37, true)] {
            let dst: Vec<Vector3<f64>> =
                src.iter().map(|p| rot * (apply_scale * p) + t).collect();
            let (s, r, tt) = umeyama(&src, &dst, fit_scale).unwrap();
            assert!((s - apply_scale).abs() < 1e-12, "scale {s}");
            assert!(r.angle_to(&rot) < 1e-12);
            assert!((tt - t).norm() < 1e-12);
        }
    }

    #[test]
    fn umeyama_rejects_degenerate_input() {
        let src = blob(2, 1);
        let dst = blob(2, 2);
        assert!(umeyama(&src, &dst, false).is_err());
        let coincident = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        let spread = blob(5, 3);
        assert!(umeyama(&coincident, &spread, true).is_err());
    }

    #[test]
    fn cloud_registers_to_itself_with_vanishing_residuals() {
        let cloud = PointCloud::from_points(blob(2000, 11));
        let result =
            register(&cloud, &cloud, None, &RegistrationConfig::default()).unwrap();
        assert!(result.converged);
        assert!(!result.diverged);
        assert!(result.stats.max < 1e-9, "max residual {}", result.stats.max);
        assert!(result.stats.rms < 1e-9);
        assert_eq!(result.stats.count, 2000);
    }

    #[test]
    fn icp_pulls_a_displaced_cloud_back_onto_the_target() {
        let target = PointCloud::from_points(blob(3000, 20));
        let rot = UnitQuaternion::from_scaled_axis(Vector3::new(0.04, 0.09, -0.06));
        let t = Vector3::new(0.03, -0.02, 0.04);
        // Source = target moved by the inverse, so the fitted transform
        // should come back to (rot, t).
        let source = PointCloud::from_points(
            target
                .points
                .iter()
                .map(|p| rot.inverse() * (p - t))
                .collect(),
        );
        let result =
            register(&source, &target, None, &RegistrationConfig::default()).unwrap();
        assert!(result.converged, "no convergence in {}", result.iterations);
        assert!(result.stats.rms < 1e-6, "rms {}", result.stats.rms);
        assert!(result.transform.rotation().angle_to(&rot) < 1e-6);
        assert!((result.transform.translation() - t).norm() < 1e-6);
    }

    #[test]
    fn scale_mode_absorbs_global_scale_drift() {
        // 1% shrink keeps every nearest neighbor on its true counterpart,
        // so the similarity fit should land exactly while the rigid fit is
        // left holding the scale error.
        let target = PointCloud::from_points(blob(2500, 21));
        let shrunk = PointCloud::from_points(
            target.points.iter().map(|p| 0.99 * p).collect(),
        );
        let rigid = register(&shrunk, &target, None, &RegistrationConfig::default()).unwrap();
        let similarity = register(
            &shrunk,
            &target,
            None,
            &RegistrationConfig {
                with_scale: true,
                ..RegistrationConfig::default()
            },
        )
        .unwrap();
        let expected = 1.0 / 0.99;
        assert!(
            (similarity.scale - expected).abs() < 1e-9,
            "scale {}",
            similarity.scale
        );
        assert!(similarity.stats.rms < 1e-9);
        assert!(similarity.stats.rms < 1e-3 * rigid.stats.rms);
    }

    #[test]
    fn registration_is_deterministic() {
        let source = PointCloud::from_points(blob(800, 30));
        let target = PointCloud::from_points(blob(900, 31));
        let a = register(&source, &target, None, &RegistrationConfig::default()).unwrap();
        let b = register(&source, &target, None, &RegistrationConfig::default()).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.transform.xyzw(), b.transform.xyzw());
        assert_eq!(a.transform.translation(), b.transform.translation());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn divergence_guard_fires_only_on_a_sustained_climb() {
        let mut guard = DivergenceGuard::default();
        for mse in [5.0, 4.0, 3.0, 2.9, 2.8, 2.7] {
            assert!(!guard.observe(mse));
        }
        // Runs of four increases broken by a dip: never fires.
        let mut guard = DivergenceGuard::default();
        for mse in [1.0, 1.1, 1.2, 1.3, 1.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
            assert!(!guard.observe(mse));
        }
        let mut guard = DivergenceGuard::default();
        let mut fired = false;
        for mse in [1.0, 1.1, 1.2, 1.3, 1.4, 1.5] {
            fired = guard.observe(mse);
        }
        assert!(fired);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let cloud = PointCloud::from_points(blob(10, 40));
        let empty = PointCloud::default();
        assert!(register(&empty, &cloud, None, &RegistrationConfig::default()).is_err());
        assert!(register(&cloud, &empty, None, &RegistrationConfig::default()).is_err());
        let bad = RegistrationConfig {
            tolerance: 0.0,
            ..RegistrationConfig::default()
        };
        assert!(register(&cloud, &cloud, None, &bad).is_err());
    }

    #[test]
    fn initialization_is_honored() {
        // A rotation far outside the identity basin: ICP from identity gets
        // stuck, ICP from (near) the true transform lands cleanly.
        let target = PointCloud::from_points(blob(1500, 50));
        let rot = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 2.6));
        let source = PointCloud::from_points(
            target.points.iter().map(|p| rot.inverse() * p).collect(),
        );
        let cold = register(&source, &target, None, &RegistrationConfig::default()).unwrap();
        let warm_start = Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 2.55)),
            Vector3::zeros(),
        );
        let warm = register(
            &source,
            &target,
            Some(&warm_start),
            &RegistrationConfig::default(),
        )
        .unwrap();
        assert!(warm.stats.rms < 1e-6, "warm rms {}", warm.stats.rms);
        assert!(
            warm.stats.rms < 0.01 * cold.stats.rms,
            "cold {} vs warm {}",
            cold.stats.rms,
            warm.stats.rms
        );
    }

    #[test]
    fn residual_stats_match_hand_computation() {
        let stats = ResidualStats::from_distances(vec![3.0, 4.0, 0.0, 1.0]);
        assert_eq!(stats.count, 4);
        assert_eq!(stats.mean, 2.0);
        assert_eq!(stats.median, 2.0);
        assert_eq!(stats.max, 4.0);
        assert!((stats.rms - (26.0f64 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(ResidualStats::from_distances(vec![]).count, 0);
    }
}
