//! The application-phase state machine: scale every depth map to the sparse
//! anchors, fuse, detect failure, and — at most once — refine the poses and
//! try again. Writes the mesh and a metrics document, and can export the
//! volume's simulated depth rasters for downstream consumers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bundle::SequenceBundle;
use crate::depth_ops::scale_depth;
use crate::error::{Error, Result};
use crate::failure::{detect, FailureReport};
use crate::geometry::{PointCloud, TriangleMesh};
use crate::io::{load_bundle, write_masked_grid, write_ply, Config};
use crate::pose_graph::{optimize_poses, ConvergenceRecord};
use crate::registration::{evaluate, IcpResult};
use crate::synth::surface_samples;
use crate::tsdf::{extract_mesh, simulate_depth, TsdfVolume, VolumeConfig};

/// Where a sequence ended up after up to two reconstruction attempts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    /// First fusion passed failure detection.
    Reconstructed,
    /// First fusion failed; the pose-refined retry passed.
    ReconstructedAfterPoseOpt,
    /// Both attempts failed — the upstream SfM solution itself is suspect.
    RerunSfmRequired,
}

impl PipelineStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Reconstructed => "reconstructed",
            Self::ReconstructedAfterPoseOpt => "reconstructed_after_pose_opt",
            Self::RerunSfmRequired => "rerun_sfm_required",
        }
    }
}

impl std::fmt::Display for PipelineStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Registration of the final mesh against ground-truth surface samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub stats: crate::registration::ResidualStats,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub rotation_xyzw: [f64; 4],
    pub translation: [f64; 3],
}

impl From<IcpResult> for EvaluationSummary {
    fn from(r: IcpResult) -> Self {
        let t = r.transform.translation();
        Self {
            stats: r.stats,
            scale: r.scale,
            iterations: r.iterations,
            converged: r.converged,
            diverged: r.diverged,
            rotation_xyzw: r.transform.xyzw(),
            translation: [t.x, t.y, t.z],
        }
    }
}

/// Everything `run_pipeline` decided and produced. Serialized verbatim as
/// the metrics document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub status: PipelineStatus,
    /// Failure reports in attempt order: the initial fusion, then (when the
    /// first failed) the post-refinement fusion.
    pub reports: Vec<FailureReport>,
    /// Present when the pose-refinement retry ran.
    pub convergence: Option<ConvergenceRecord>,
    /// Per-frame depth scaling factors, frame order.
    pub scales: Vec<f64>,
    /// Present when the bundle carried ground truth and the final mesh was
    /// registered against it.
    pub evaluation: Option<EvaluationSummary>,
    pub mesh_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Scale every frame's depth map onto its sparse anchors. Returns the
/// scaled bundle and the per-frame factors.
pub fn scale_bundle(bundle: &SequenceBundle) -> Result<(SequenceBundle, Vec<f64>)> {
    let mut scaled = bundle.clone();
    let mut scales = Vec::with_capacity(bundle.frames.len());
    for f in &mut scaled.frames {
        let (depth, s) = scale_depth(&f.depth, &f.sparse)?;
        f.depth = depth;
        scales.push(s);
    }
    Ok((scaled, scales))
}

/// Resolve the volume bounds for a bundle: a bounded config is used as-is,
/// an unbounded one grows to the union of all frame frustums.
pub fn fit_volume(base: &VolumeConfig, bundle: &SequenceBundle) -> Result<VolumeConfig> {
    base.validate()?;
    bundle.validate()?;
    if base.is_bounded() {
        return Ok(base.clone());
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for f in &bundle.frames {
        let fitted = base.fit_frustum(&f.depth, &f.pose, &bundle.intrinsics)?;
        let origin = fitted.origin.expect("fit_frustum sets origin");
        let dims = fitted.dims.expect("fit_frustum sets dims");
        for k in 0..3 {
            lo[k] = lo[k].min(origin[k]);
            hi[k] = hi[k].max(origin[k] + dims[k] as f64 * fitted.voxel_size);
        }
    }
    let mut dims = [0usize; 3];
    for k in 0..3 {
        dims[k] = (((hi[k] - lo[k]) / base.voxel_size).ceil() as usize).max(2);
    }
    Ok(VolumeConfig {
        dims: Some(dims),
        origin: Some([lo.x, lo.y, lo.z]),
        ..base.clone()
    })
}

/// Integrate all frames, in frame order, into a fresh volume.
pub fn fuse_bundle(bundle: &SequenceBundle, volume_config: &VolumeConfig) -> Result<TsdfVolume> {
    let fitted = fit_volume(volume_config, bundle)?;
    let mut vol = TsdfVolume::new(fitted)?;
    for f in &bundle.frames {
        vol.integrate_frame(&f.depth, f.color.as_ref(), &f.pose, &bundle.intrinsics)?;
    }
    Ok(vol)
}

/// Run the full state machine on a bundle directory. `seed` drives only the
/// evaluation sampling; the reconstruction itself is deterministic.
pub fn run_pipeline(
    bundle_path: &Path,
    config: &Config,
    output_dir: &Path,
    seed: u64,
) -> Result<PipelineOutcome> {
    let bundle = load_bundle(bundle_path)?;
    run_pipeline_bundle(&bundle, config, output_dir, seed)
}

/// [`run_pipeline`] on an already-loaded bundle.
pub fn run_pipeline_bundle(
    bundle: &SequenceBundle,
    config: &Config,
    output_dir: &Path,
    seed: u64,
) -> Result<PipelineOutcome> {
    config.validate()?;
    bundle.validate()?;

    let (scaled, scales) = scale_bundle(bundle)?;
    let volume = fuse_bundle(&scaled, &config.volume)?;
    let first = detect(&scaled, &volume, &config.failure)?;

    let mut reports = vec![first.clone()];
    let mut convergence = None;
    let (status, final_bundle, final_volume) = if !first.is_failure() {
        (PipelineStatus::Reconstructed, scaled, volume)
    } else {
        let (poses, record) =
            optimize_poses(&scaled, &config.pose_graph, &config.optimizer)?;
        convergence = Some(record);
        let mut refined = scaled;
        for (f, p) in refined.frames.iter_mut().zip(&poses) {
            f.pose = *p;
        }
        let retry_volume = fuse_bundle(&refined, &config.volume)?;
        let second = detect(&refined, &retry_volume, &config.failure)?;
        let failed_again = second.is_failure();
        reports.push(second);
        let status = if failed_again {
            PipelineStatus::RerunSfmRequired
        } else {
            PipelineStatus::ReconstructedAfterPoseOpt
        };
        (status, refined, retry_volume)
    };
    let _ = &final_bundle;

    fs::create_dir_all(output_dir)?;
    let mesh = extract_mesh(&final_volume)?;
    let mesh_path = output_dir.join("mesh.ply");
    write_ply(&mesh_path, &mesh)?;

    let evaluation = match (&bundle.ground_truth, status) {
        (Some(gt), s) if s != PipelineStatus::RerunSfmRequired && !mesh.is_empty() => {
            let samples =
                surface_samples(&gt.scene, config.registration.target_count, seed)?;
            let reference = PointCloud::from_points(samples);
            let icp = evaluate(&mesh, &reference, None, &config.registration, seed)?;
            Some(EvaluationSummary::from(icp))
        }
        _ => None,
    };

    let metrics_path = output_dir.join("metrics.json");
    let outcome = PipelineOutcome {
        status,
        reports,
        convergence,
        scales,
        evaluation,
        mesh_path,
        metrics_path: metrics_path.clone(),
    };
    let doc = serde_json::to_string_pretty(&outcome)?;
    fs::write(&metrics_path, doc + "\n")?;
    Ok(outcome)
}

/// Write one simulated depth raster per trajectory pose, in the same DMAP
/// format as the bundle's mean rasters. Requires evidence that the
/// reconstruction passed failure detection; a pose whose rays all miss the
/// observed volume yields a fully invalid raster, not an error.
pub fn export_simulated_depths(
    bundle: &SequenceBundle,
    vol: &TsdfVolume,
    report: &FailureReport,
    output_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.is_failure() {
        return Err(Error::InvalidInput(format!(
            "refusing to export simulated depths from a failed reconstruction ({})",
            report.reason.as_deref().unwrap_or("failure detected")
        )));
    }
    bundle.validate()?;
    fs::create_dir_all(output_dir)?;
    let mut paths = Vec::with_capacity(bundle.frames.len());
    for f in &bundle.frames {
        let sim = simulate_depth(vol, &f.pose, &bundle.intrinsics)?;
        let path = output_dir.join(format!("frame_{:06}.dmap", f.frame_id));
        write_masked_grid(&path, sim.depth(), sim.valid())?;
        paths.push(path);
    }
    Ok(paths)
}

/// Register a mesh against reference surface samples — the evaluation
/// entry point used by the CLI.
pub fn evaluate_mesh(
    mesh: &TriangleMesh,
    reference: &PointCloud,
    config: &Config,
    seed: u64,
) -> Result<EvaluationSummary> {
    let icp = evaluate(mesh, reference, None, &config.registration, seed)?;
    Ok(EvaluationSummary::from(icp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::failure::{FailureConfig, FailureThresholds};
    use crate::geometry::CameraIntrinsics;
    use crate::io::{read_masked_grid, read_ply, save_bundle};
    use crate::synth::{make_sequence, presets, NoiseSpec, SynthSettings};
    use tempfile::tempdir;

    fn clean_bundle(seed: u64, frames: usize) -> SequenceBundle {
        let (scene, traj) = presets::cavity(seed);
        let noise = NoiseSpec {
            std_floor_frac: 0.05,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames,
            sparse_per_frame: 40,
            matches_per_pair: 30,
            match_intervals: vec![1, 2],
        };
        let intr = CameraIntrinsics::centered(40.0, 40.0, 48, 36).unwrap();
        make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap()
    }

    fn coarse_config() -> Config {
        let mut config = Config::default();
        config.volume.voxel_size = 0.03;
        config.pose_graph.intervals = vec![1, 2];
        config.failure.pair_interval = 2;
        config
    }

    #[test]
    fn clean_bundle_reconstructs_on_the_first_attempt() {
        let dir = tempdir().unwrap();
        let bundle = clean_bundle(3, 8);
        let config = coarse_config();
        let outcome =
            run_pipeline_bundle(&bundle, &config, dir.path(), 7).unwrap();
        assert_eq!(outcome.status, PipelineStatus::Reconstructed);
        assert_eq!(outcome.reports.len(), 1);
        assert!(outcome.convergence.is_none());
        assert_eq!(outcome.scales.len(), 8);
        // Synthetic depths are already metric, so scaling is a no-op.
        for s in &outcome.scales {
            assert!((s - 1.0).abs() < 0.05, "scale {s}");
        }

        let mesh = read_ply(&outcome.mesh_path).unwrap();
        assert!(!mesh.is_empty());
        let eval = outcome.evaluation.as_ref().expect("ground truth present");
        assert!(
            eval.stats.rms <= 2.0 * config.volume.voxel_size,
            "rms {} vs voxel {}",
            eval.stats.rms,
            config.volume.voxel_size
        );

        let metrics_text = std::fs::read_to_string(&outcome.metrics_path).unwrap();
        let parsed: PipelineOutcome = serde_json::from_str(&metrics_text).unwrap();
        assert_eq!(parsed.status, outcome.status);
    }

    #[test]
    fn pipeline_runs_from_a_directory_and_is_deterministic() {
        let dir = tempdir().unwrap();
        let bundle = clean_bundle(4, 6);
        let bundle_dir = dir.path().join("bundle");
        save_bundle(&bundle_dir, &bundle).unwrap();
        let config = coarse_config();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let a = run_pipeline(&bundle_dir, &config, &out_a, 11).unwrap();
        let b = run_pipeline(&bundle_dir, &config, &out_b, 11).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.scales, b.scales);
        assert_eq!(
            std::fs::read(&a.mesh_path).unwrap(),
            std::fs::read(&b.mesh_path).unwrap()
        );
        let ea = a.evaluation.unwrap();
        let eb = b.evaluation.unwrap();
        assert_eq!(ea.stats, eb.stats);
    }

    #[test]
    fn impossible_thresholds_walk_the_full_state_machine() {
        // Thresholds nothing can meet force both attempts to fail, which
        // must produce exactly two reports, one optimization record, and
        // the rerun status.
        let dir = tempdir().unwrap();
        let bundle = clean_bundle(5, 6);
        let mut config = coarse_config();
        config.failure = FailureConfig {
            thresholds: FailureThresholds {
                max_sim_loss: -1e12,
                max_flow_loss: -1e12,
                max_consistency_loss: -1e12,
            },
            ..config.failure
        };
        let outcome =
            run_pipeline_bundle(&bundle, &config, dir.path(), 3).unwrap();
        assert_eq!(outcome.status, PipelineStatus::RerunSfmRequired);
        assert_eq!(outcome.reports.len(), 2);
        assert!(outcome.reports.iter().all(|r| r.is_failure()));
        assert!(outcome.convergence.is_some());
        assert!(outcome.evaluation.is_none());
        // The mesh is still written for post-mortem inspection.
        assert!(outcome.mesh_path.exists());
    }

    #[test]
    fn simulated_depth_export_round_trips_and_respects_refusal() {
        let dir = tempdir().unwrap();
        let bundle = clean_bundle(6, 6);
        let config = coarse_config();
        let (scaled, _) = scale_bundle(&bundle).unwrap();
        let vol = fuse_bundle(&scaled, &config.volume).unwrap();
        let report = detect(&scaled, &vol, &config.failure).unwrap();
        assert!(!report.is_failure());

        let out = dir.path().join("sim");
        let paths = export_simulated_depths(&scaled, &vol, &report, &out).unwrap();
        assert_eq!(paths.len(), 6);
        for p in &paths {
            let (_, valid) = read_masked_grid(p).unwrap();
            assert!(valid.count_set() > 0, "{} has no valid pixels", p.display());
        }

        let mut failed = report.clone();
        failed.verdict = crate::failure::Verdict::Failure;
        let err = export_simulated_depths(&scaled, &vol, &failed, &out);
        assert!(err.is_err());
    }

    #[test]
    fn poses_outside_coverage_export_fully_invalid_rasters() {
        let dir = tempdir().unwrap();
        let mut bundle = clean_bundle(7, 6);
        let config = coarse_config();
        let (scaled, _) = scale_bundle(&bundle).unwrap();
        let vol = fuse_bundle(&scaled, &config.volume).unwrap();
        let report = detect(&scaled, &vol, &config.failure).unwrap();

        // Exile one trajectory pose far outside the fused region.
        bundle = scaled.clone();
        let far = crate::geometry::Pose::new(
            *bundle.frames[2].pose.rotation(),
            bundle.frames[2].pose.translation() + Vector3::new(1e3, 0.0, 0.0),
        );
        bundle.frames[2].pose = far;
        let out = dir.path().join("sim");
        let paths = export_simulated_depths(&bundle, &vol, &report, &out).unwrap();
        let (_, valid) = read_masked_grid(&paths[2]).unwrap();
        assert_eq!(valid.count_set(), 0);
        let (_, valid_other) = read_masked_grid(&paths[0]).unwrap();
        assert!(valid_other.count_set() > 0);
    }
}
