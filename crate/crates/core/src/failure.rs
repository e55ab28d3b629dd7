//! Automatic failure detection for fused reconstructions.
//!
//! The fused volume is raycast back into every camera and compared against
//! what the depth network predicted and what the feature matches imply.
//! Three metrics summarize the disagreement: a dense simulation loss per
//! frame, and sparse-flow / depth-consistency losses over frame pairs where
//! the simulated depth stands in for the predicted means. The reconstruction
//! fails if any metric exceeds its threshold — or cannot be computed at all.

use serde::{Deserialize, Serialize};

use crate::bundle::SequenceBundle;
use crate::error::{Error, Result};
use crate::geometry::DepthMap;
use crate::losses::{dense_simulation_loss, depth_consistency_pair, sparse_flow_loss};
use crate::tsdf::{simulate_depth, TsdfVolume};

/// Per-metric decision thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureThresholds {
    pub sim: f64,
    pub flow: f64,
    pub consistency: f64,
}

impl Default for FailureThresholds {
    fn default() -> Self {
        Self {
            sim: 2.0,
            flow: 0.1,
            consistency: 2.0,
        }
    }
}

/// Detection settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureConfig {
    pub thresholds: FailureThresholds,
    /// Temporal stride between the two frames of a metric pair.
    pub pair_interval: usize,
    /// Minimum fraction of a frame's predicted-valid pixels that the
    /// simulated depth must also cover for the frame to count; prevents a
    /// handful of pixels at a frustum edge from dominating an average.
    pub min_coverage: f64,
    /// Stabilizer inside the likelihood losses.
    pub epsilon: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            thresholds: FailureThresholds::default(),
            pair_interval: 5,
            min_coverage: 0.05,
            epsilon: 1e-8,
        }
    }
}

impl FailureConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [
            ("sim", t.sim),
            ("flow", t.flow),
            ("consistency", t.consistency),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "threshold {name} must be finite, got {v}"
                )));
            }
        }
        if self.pair_interval == 0 {
            return Err(Error::InvalidInput("pair interval must be >= 1".into()));
        }
        if !(self.min_coverage >= 0.0 && self.min_coverage <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "min coverage must be in [0, 1], got {}",
                self.min_coverage
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Overall decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Success,
    Failure,
}

/// Which metrics individually passed. A metric that could not be computed
/// counts as not passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPasses {
    pub sim: bool,
    pub flow: bool,
    pub consistency: bool,
}

/// Outcome of [`detect`]. Metric fields are `None` when no frame or pair
/// provided enough coverage to evaluate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub sim_loss: Option<f64>,
    pub flow_loss: Option<f64>,
    pub consistency_loss: Option<f64>,
    pub thresholds: FailureThresholds,
    pub passes: MetricPasses,
    pub verdict: Verdict,
    /// Frames whose simulated depth covered too little of the prediction.
    pub skipped_frames: usize,
    /// Present on failure: which metric tripped, or why none could run.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

impl FailureReport {
    pub fn is_failure(&self) -> bool {
        self.verdict == Verdict::Failure
    }
}

/// Check a fused volume against the sequence it was built from.
///
/// Every frame gets a simulated depth raycast from the volume. Metric one
/// averages the dense simulation loss per frame; metrics two and three
/// average the sparse-flow and (symmetric) depth-consistency losses over
/// `(j, j + interval)` pairs with the simulated depth standing in for the
/// predicted means (predicted stds are kept). Negative averages — possible
/// because log-likelihoods are unbounded below — clamp to zero, which can
/// only ever make the verdict more lenient.
pub fn detect(
    bundle: &SequenceBundle,
    vol: &TsdfVolume,
    config: &FailureConfig,
) -> Result<FailureReport> {
    config.validate()?;
    bundle.validate()?;
    if bundle.frames.len() < 2 {
        return Err(Error::InvalidInput(
            "failure detection needs at least two frames".into(),
        ));
    }
    let intr = &bundle.intrinsics;

    // Simulated depth per frame, gated on covering enough of the prediction.
    // An empty volume simply yields no usable frames rather than an error:
    // that is itself the strongest failure signal.
    let mut skipped = 0usize;
    let mut sims: Vec<Option<(crate::geometry::SimulatedDepth, DepthMap)>> =
        Vec::with_capacity(bundle.frames.len());
    for f in &bundle.frames {
        let entry = match simulate_depth(vol, &f.pose, intr) {
            Ok(sim) => {
                let overlap = sim.valid().and(f.depth.valid())?.count_set();
                let denom = f.depth.valid_count();
                if denom == 0 || (overlap as f64) < config.min_coverage * denom as f64 {
                    None
                } else {
                    let dm = sim.to_depth_map_with_std(&f.depth)?;
                    Some((sim, dm))
                }
            }
            Err(Error::EmptyVolume) => None,
            Err(e) => return Err(e),
        };
        if entry.is_none() {
            skipped += 1;
        }
        sims.push(entry);
    }

    let mut sim_terms = Vec::new();
    for (f, s) in bundle.frames.iter().zip(&sims) {
        if let Some((sim, _)) = s {
            if let Ok(l) = dense_simulation_loss(&f.depth, sim, config.epsilon) {
                sim_terms.push(l);
            }
        }
    }

    let mut flow_terms = Vec::new();
    let mut cons_terms = Vec::new();
    let n = bundle.frames.len();
    for j in 0..n.saturating_sub(config.pair_interval) {
        let k = j + config.pair_interval;
        let (pose_j, pose_k) = (&bundle.frames[j].pose, &bundle.frames[k].pose);
        let Some((_, dm_j)) = &sims[j] else { continue };
        let pairs = bundle.matches.for_pair(j, k);
        if !pairs.is_empty() {
            if let Ok(l) = sparse_flow_loss(dm_j, pose_j, pose_k, &pairs, intr) {
                flow_terms.push(l);
            }
        }
        if let Some((_, dm_k)) = &sims[k] {
            if let Ok(l) =
                depth_consistency_pair(dm_j, dm_k, pose_j, pose_k, intr, config.epsilon)
            {
                cons_terms.push(l);
            }
        }
    }

    let avg = |terms: &[f64]| {
        (!terms.is_empty())
            .then(|| (terms.iter().sum::<f64>() / terms.len() as f64).max(0.0))
    };
    let sim_loss = avg(&sim_terms);
    let flow_loss = avg(&flow_terms);
    let consistency_loss = avg(&cons_terms);

    let t = config.thresholds;
    let passes = MetricPasses {
        sim: sim_loss.is_some_and(|m| m <= t.sim),
        flow: flow_loss.is_some_and(|m| m <= t.flow),
        consistency: consistency_loss.is_some_and(|m| m <= t.consistency),
    };
    let verdict = if passes.sim && passes.flow && passes.consistency {
        Verdict::Success
    } else {
        Verdict::Failure
    };
    let reason = if sim_loss.is_none() || flow_loss.is_none() || consistency_loss.is_none() {
        Some("insufficient coverage".to_string())
    } else if verdict == Verdict::Failure {
        let mut tripped = Vec::new();
        if !passes.sim {
            tripped.push(format!("sim_loss {:.4} > {}", sim_loss.unwrap(), t.sim));
        }
        if !passes.flow {
            tripped.push(format!("flow_loss {:.4} > {}", flow_loss.unwrap(), t.flow));
        }
        if !passes.consistency {
            tripped.push(format!(
                "consistency_loss {:.4} > {}",
                consistency_loss.unwrap(),
                t.consistency
            ));
        }
        Some(tripped.join("; "))
    } else {
        None
    };

    Ok(FailureReport {
        sim_loss,
        flow_loss,
        consistency_loss,
        thresholds: t,
        passes,
        verdict,
        skipped_frames: skipped,
        reason,
    })
}

/// Derive thresholds from clean-run reports: for each metric, the 95th
/// percentile plus a safety margin of `max(q95 − q5, 0.05·|q95|, 1e-3)`.
/// Absolute thresholds are scale-dependent, so recalibrating on known-good
/// runs of the target data beats trusting defaults.
pub fn calibrate_thresholds(reports: &[FailureReport]) -> Result<FailureThresholds> {
    let collect = |pick: fn(&FailureReport) -> Option<f64>, name: &str| -> Result<f64> {
        let vals: Vec<f64> = reports.iter().filter_map(pick).collect();
        if vals.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "no clean-run samples for the {name} metric"
            )));
        }
        Ok(threshold_from_samples(&vals))
    };
    Ok(FailureThresholds {
        sim: collect(|r| r.sim_loss, "sim")?,
        flow: collect(|r| r.flow_loss, "flow")?,
        consistency: collect(|r| r.consistency_loss, "consistency")?,
    })
}

/// Threshold for one metric from clean samples: q95 plus a spread/relative
/// margin floor. Exposed for the calibration command and its tests.
pub fn threshold_from_samples(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "empty calibration sample");
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f64 {
        if v.len() == 1 {
            return v[0];
        }
        let x = p * (v.len() - 1) as f64;
        let lo = x.floor() as usize;
        let hi = x.ceil() as usize;
        let w = x - lo as f64;
        v[lo] * (1.0 - w) + v[hi] * w
    };
    let q95 = q(0.95);
    let q5 = q(0.05);
    q95 + (q95 - q5).max(0.05 * q95.abs()).max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::synth::{
        corrupt_sequence, make_sequence, presets, CorruptKind, NoiseSpec, SynthSettings,
    };
    use crate::tsdf::VolumeConfig;

    /// Clean synthetic sequence (optionally pose-scrambled), fused.
    fn fused_scene(pose_noise_deg: f64, seed: u64) -> (SequenceBundle, TsdfVolume) {
        let (scene, traj) = presets::cavity(seed);
        let noise = NoiseSpec {
            std_floor_frac: 0.005,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: 12,
            sparse_per_frame: 50,
            matches_per_pair: 60,
            match_intervals: vec![5],
        };
        let intr = CameraIntrinsics::centered(55.0, 55.0, 64, 48).unwrap();
        let mut bundle = make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap();
        if pose_noise_deg > 0.0 {
            bundle =
                corrupt_sequence(&bundle, CorruptKind::PoseScramble, pose_noise_deg, seed + 1)
                    .unwrap();
        }
        let config = VolumeConfig {
            voxel_size: 0.02,
            dims: Some([64, 64, 64]),
            origin: Some([-0.64, -0.64, -0.64]),
            ..VolumeConfig::default()
        };
        let mut vol = TsdfVolume::new(config).unwrap();
        for f in &bundle.frames {
            vol.integrate_frame(&f.depth, f.color.as_ref(), &f.pose, &bundle.intrinsics)
                .unwrap();
        }
        (bundle, vol)
    }

    #[test]
    fn clean_fusion_passes_all_metrics() {
        let (bundle, vol) = fused_scene(0.0, 21);
        let report = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Success, "report: {report:?}");
        assert!(report.sim_loss.unwrap() <= 2.0);
        assert!(report.flow_loss.unwrap() <= 0.1);
        assert!(report.consistency_loss.unwrap() <= 2.0);
        assert_eq!(report.skipped_frames, 0);
        assert!(report.reason.is_none());
    }

    #[test]
    fn scrambled_poses_trip_the_detector() {
        let (bundle, vol) = fused_scene(10.0, 21);
        let report = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Failure, "report: {report:?}");
        assert!(report.reason.is_some());
    }

    #[test]
    fn metrics_do_not_shrink_as_noise_grows() {
        let levels = [0.0, 2.0, 10.0];
        let mut sim = Vec::new();
        let mut cons = Vec::new();
        for &deg in &levels {
            let (bundle, vol) = fused_scene(deg, 33);
            let r = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
            sim.push(r.sim_loss.unwrap());
            cons.push(r.consistency_loss.unwrap());
        }
        for w in sim.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "sim metric shrank: {sim:?}");
        }
        for w in cons.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "consistency metric shrank: {cons:?}");
        }
        // Clear separation between clean and badly corrupted.
        assert!(cons[2] >= 3.0 * cons[0].max(1e-6), "no separation: {cons:?}");
    }

    #[test]
    fn empty_volume_is_insufficient_coverage_not_an_error() {
        let (bundle, _) = fused_scene(0.0, 5);
        let config = VolumeConfig {
            voxel_size: 0.02,
            dims: Some([8, 8, 8]),
            origin: Some([-0.08, -0.08, -0.08]),
            ..VolumeConfig::default()
        };
        let empty = TsdfVolume::new(config).unwrap();
        let report = detect(&bundle, &empty, &FailureConfig::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Failure);
        assert_eq!(report.reason.as_deref(), Some("insufficient coverage"));
        assert_eq!(report.skipped_frames, bundle.frames.len());
        assert!(report.sim_loss.is_none());
    }

    #[test]
    fn report_serializes_with_stable_field_names() {
        let (bundle, vol) = fused_scene(0.0, 21);
        let report = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "sim_loss",
            "flow_loss",
            "consistency_loss",
            "thresholds",
            "verdict",
            "skipped_frames",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["verdict"], "success");
        let back: FailureReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn identical_inputs_identical_reports() {
        let (bundle, vol) = fused_scene(2.0, 9);
        let a = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
        let b = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibration_sets_thresholds_above_the_samples() {
        // Constant samples: margin is the relative floor.
        let c = 4.0;
        let t = threshold_from_samples(&vec![c; 20]);
        assert!((t - (c + 0.05 * c)).abs() < 1e-12);

        // Spread samples: margin is the q95 - q5 spread.
        let samples: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let t = threshold_from_samples(&samples);
        assert!((t - (95.0 + 90.0)).abs() < 1e-9, "got {t}");

        // Tiny samples: the absolute floor keeps the threshold meaningful.
        let t = threshold_from_samples(&vec![0.0; 5]);
        assert!((t - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn calibrate_requires_samples_for_every_metric() {
        let (bundle, vol) = fused_scene(0.0, 21);
        let good = detect(&bundle, &vol, &FailureConfig::default()).unwrap();
        let thresholds = calibrate_thresholds(&[good.clone()]).unwrap();
        assert!(thresholds.sim >= good.sim_loss.unwrap());
        assert!(thresholds.flow >= good.flow_loss.unwrap());

        let mut gutted = good;
        gutted.flow_loss = None;
        assert!(calibrate_thresholds(&[gutted]).is_err());
    }
}
