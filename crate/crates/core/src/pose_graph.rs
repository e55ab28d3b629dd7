//! Dense pose-graph refinement.
//!
//! Starting from the SfM pose estimates, all camera poses are refined
//! jointly (relative to the first frame, which stays fixed) by minimizing a
//! weighted sum of depth-consistency and sparse-flow losses over frame pairs
//! at several temporal intervals. Depth maps are treated as fixed: only the
//! rigid transforms move.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::SequenceBundle;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::losses::{
    depth_consistency_pair_pose_grad_strided, depth_consistency_pair_strided, sparse_flow_loss,
    sparse_flow_loss_pose_grad,
};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Objective shape: which pairs participate and how the two losses weigh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseGraphConfig {
    /// Temporal intervals; every `(j, j + Δ)` pair for each Δ listed.
    pub intervals: Vec<usize>,
    /// Weight of the depth-consistency term.
    pub w_dc: f64,
    /// Weight of the sparse-flow term.
    pub w_sf: f64,
    /// Likelihood stabilizer inside the consistency loss.
    pub epsilon: f64,
    /// Pixel stride for the consistency warp; 1 uses every pixel, larger
    /// values subsample for speed at some accuracy cost.
    pub dc_stride: usize,
}

impl Default for PoseGraphConfig {
    fn default() -> Self {
        Self {
            intervals: vec![5, 6, 7, 8],
            w_dc: 1.0,
            w_sf: 100.0,
            epsilon: 1e-8,
            dc_stride: 1,
        }
    }
}

impl PoseGraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::InvalidInput("no pair intervals configured".into()));
        }
        if self.intervals.contains(&0) {
            return Err(Error::InvalidInput("pair interval 0 pairs a frame with itself".into()));
        }
        for (name, w) in [("consistency", self.w_dc), ("flow", self.w_sf)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} weight must be finite and non-negative, got {w}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.dc_stride == 0 {
            return Err(Error::InvalidInput("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// How gradients are obtained. Analytic uses forward-mode duals through the
/// warp; finite difference exists as a slow independent check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

/// First-order optimizer knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Relative objective decrease below which the problem counts as
    /// converged; also the sufficient-decrease floor of the line search.
    pub tolerance: f64,
    /// Initial trust scale for the per-parameter normalized step.
    pub initial_step: f64,
    pub gradient_mode: GradientMode,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            initial_step: 1e-2,
            gradient_mode: GradientMode::Analytic,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("need at least one iteration".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "initial step must be positive, got {}",
                self.initial_step
            )));
        }
        Ok(())
    }
}

/// What the optimizer did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    /// True when the run stopped because no step above tolerance exists,
    /// rather than by exhausting the iteration budget.
    pub converged: bool,
    /// False when optimization aborted on non-finite values and the input
    /// poses were returned untouched.
    pub refined: bool,
    /// Pairs that contributed nothing (no depth overlap and no usable
    /// matches) in the final evaluation.
    pub degenerate_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
}

/// All `(j, j + Δ)` pairs, each unordered pair once per interval.
fn build_pairs(n_frames: usize, intervals: &[usize]) -> Vec<(usize, usize)> {
    let mut distinct: Vec<usize> = intervals.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut pairs = Vec::new();
    for delta in distinct {
        for j in 0..n_frames.saturating_sub(delta) {
            pairs.push((j, j + delta));
        }
    }
    pairs
}

/// One pair's weighted contribution: `None` when the pair is degenerate
/// (neither loss evaluable). A loss whose weight is zero is skipped, which
/// counts as an evaluable zero — weights choose the objective, data decide
/// degeneracy of what remains.
fn pair_term(
    bundle: &SequenceBundle,
    poses: &[Pose],
    j: usize,
    k: usize,
    config: &PoseGraphConfig,
) -> Option<f64> {
    let dc = if config.w_dc > 0.0 {
        match depth_consistency_pair_strided(
            &bundle.frames[j].depth,
            &bundle.frames[k].depth,
            &poses[j],
            &poses[k],
            &bundle.intrinsics,
            config.epsilon,
            config.dc_stride,
        ) {
            Ok(v) => Some(v),
            Err(_) => None,
        }
    } else {
        Some(0.0)
    };
    let sf = if config.w_sf > 0.0 {
        let pairs = bundle.matches.for_pair(j, k);
        if pairs.is_empty() {
            None
        } else {
            sparse_flow_loss(
                &bundle.frames[j].depth,
                &poses[j],
                &poses[k],
                &pairs,
                &bundle.intrinsics,
            )
            .ok()
        }
    } else {
        Some(0.0)
    };
    match (dc, sf) {
        (None, None) => None,
        (d, s) => Some(config.w_dc * d.unwrap_or(0.0) + config.w_sf * s.unwrap_or(0.0)),
    }
}

fn objective_over_pairs(
    bundle: &SequenceBundle,
    poses: &[Pose],
    pairs: &[(usize, usize)],
    config: &PoseGraphConfig,
) -> Result<(f64, usize)> {
    let terms: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(j, k)| pair_term(bundle, poses, j, k, config))
        .collect();
    let degenerate = terms.iter().filter(|t| t.is_none()).count();
    if degenerate == pairs.len() {
        return Err(Error::UnconstrainedProblem);
    }
    Ok((terms.into_iter().flatten().sum(), degenerate))
}

/// Total objective at the given poses: Σ over pairs of
/// `w_dc · consistency + w_sf · flow`. Returns the value and the number of
/// degenerate pairs; errs when every pair is degenerate.
pub fn objective(
    bundle: &SequenceBundle,
    poses: &[Pose],
    config: &PoseGraphConfig,
) -> Result<(f64, usize)> {
    config.validate()?;
    if poses.len() != bundle.frames.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} poses for {} frames",
            poses.len(),
            bundle.frames.len()
        )));
    }
    if bundle.frames.len() < 2 {
        return Err(Error::InvalidInput("pose graph needs at least two frames".into()));
    }
    let pairs = build_pairs(bundle.frames.len(), &config.intervals);
    if pairs.is_empty() {
        return Err(Error::UnconstrainedProblem);
    }
    objective_over_pairs(bundle, poses, &pairs, config)
}

/// Analytic gradient over local increments `[ω_i, v_i]` for frames `1..n`
/// (frame 0 is the gauge anchor and gets none), via 12-lane duals per pair.
fn gradient_analytic(
    bundle: &SequenceBundle,
    poses: &[Pose],
    pairs: &[(usize, usize)],
    config: &PoseGraphConfig,
) -> Result<(f64, Vec<f64>)> {
    let per_pair: Vec<Option<(f64, [f64; 12])>> = pairs
        .par_iter()
        .map(|&(j, k)| {
            let mut value = 0.0;
            let mut grad = [0.0; 12];
            let mut any = false;
            if config.w_dc > 0.0 {
                if let Ok((v, g)) = depth_consistency_pair_pose_grad_strided(
                    &bundle.frames[j].depth,
                    &bundle.frames[k].depth,
                    &poses[j],
                    &poses[k],
                    &bundle.intrinsics,
                    config.epsilon,
                    config.dc_stride,
                ) {
                    value += config.w_dc * v;
                    for (acc, d) in grad.iter_mut().zip(&g) {
                        *acc += config.w_dc * d;
                    }
                    any = true;
                }
            } else {
                any = true;
            }
            if config.w_sf > 0.0 {
                let m = bundle.matches.for_pair(j, k);
                if !m.is_empty() {
                    if let Ok((v, g)) = sparse_flow_loss_pose_grad(
                        &bundle.frames[j].depth,
                        &poses[j],
                        &poses[k],
                        &m,
                        &bundle.intrinsics,
                    ) {
                        value += config.w_sf * v;
                        for (acc, d) in grad.iter_mut().zip(&g) {
                            *acc += config.w_sf * d;
                        }
                        any = true;
                    }
                }
            } else {
                any = true;
            }
            any.then_some((value, grad))
        })
        .collect();

    let n_params = 6 * (poses.len() - 1);
    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    let mut all_degenerate = true;
    for (&(j, k), term) in pairs.iter().zip(&per_pair) {
        let Some((v, g)) = term else { continue };
        all_degenerate = false;
        total += v;
        if j >= 1 {
            for l in 0..6 {
                grad[6 * (j - 1) + l] += g[l];
            }
        }
        if k >= 1 {
            for l in 0..6 {
                grad[6 * (k - 1) + l] += g[6 + l];
            }
        }
    }
    if all_degenerate {
        return Err(Error::UnconstrainedProblem);
    }
    Ok((total, grad))
}

/// Central finite differences of the objective, matching the analytic
/// parameterization. Slow; a cross-check rather than a daily driver.
fn gradient_fd(
    bundle: &SequenceBundle,
    poses: &[Pose],
    pairs: &[(usize, usize)],
    config: &PoseGraphConfig,
) -> Result<(f64, Vec<f64>)> {
    const H: f64 = 1e-8;
    let (value, _) = objective_over_pairs(bundle, poses, pairs, config)?;
    let n_params = 6 * (poses.len() - 1);
    let mut grad = vec![0.0; n_params];
    for p in 0..n_params {
        let probe = |offset: f64| -> Result<f64> {
            let mut delta = vec![0.0; n_params];
            delta[p] = offset;
            let moved = retract_all(poses, &delta, 1.0);
            Ok(objective_over_pairs(bundle, &moved, pairs, config)?.0)
        };
        // Fourth-order central stencil. The likelihood terms are stiff
        // (1/std² curvature), and warp validity masks make the objective
        // only piecewise smooth, so the step must be small enough that the
        // probe window almost never straddles a mask boundary — the wide
        // stencil keeps truncation harmless at that size.
        grad[p] = (probe(-2.0 * H)? - 8.0 * probe(-H)? + 8.0 * probe(H)? - probe(2.0 * H)?)
            / (12.0 * H);
    }
    Ok((value, grad))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Left Jacobian of SO(3): `exp((ω + ε)ˆ) ≈ exp((J_l(ω) ε)ˆ) · exp(ω̂)`.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let hat = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    if theta < 1e-8 {
        return Matrix3::identity() + hat * 0.5 + hat * hat / 6.0;
    }
    let a = (1.0 - theta.cos()) / (theta * theta);
    let b = (theta - theta.sin()) / (theta * theta * theta);
    Matrix3::identity() + hat * a + hat * hat * b
}

/// Apply `scale · delta` as local increments: frame `i ≥ 1` rotates by
/// `exp(ω̂)` on the left and shifts by `v`, with `[ω, v]` at `delta[6(i-1)..]`.
fn retract_all(poses: &[Pose], delta: &[f64], scale: f64) -> Vec<Pose> {
    let mut out = Vec::with_capacity(poses.len());
    out.push(poses[0]);
    for i in 1..poses.len() {
        let d = &delta[6 * (i - 1)..6 * i];
        let omega = Vector3::new(d[0], d[1], d[2]) * scale;
        let v = Vector3::new(d[3], d[4], d[5]) * scale;
        out.push(poses[i].retract(&omega, &v));
    }
    out
}

/// Refine every pose but the first.
///
/// The problem is re-anchored internally: poses are expressed relative to
/// frame 0, which the losses cannot see (they depend only on relative
/// transforms), and the anchor's original pose is re-applied afterwards —
/// the first frame's pose is returned bit-identical.
///
/// The optimizer is first-order descent with per-parameter step scaling
/// (root-mean-square gradient memory) and a monotone backtracking line
/// search that only accepts steps clearing the tolerance; the returned
/// objective is therefore never above the initial one. Non-finite values
/// abort the run and return the input poses with `refined = false`.
pub fn optimize_poses(
    bundle: &SequenceBundle,
    config: &PoseGraphConfig,
    settings: &OptimizerSettings,
) -> Result<(Vec<Pose>, ConvergenceRecord)> {
    config.validate()?;
    settings.validate()?;
    bundle.validate()?;
    if bundle.frames.len() < 2 {
        return Err(Error::InvalidInput("pose graph needs at least two frames".into()));
    }
    let input: Vec<Pose> = bundle.frames.iter().map(|f| f.pose).collect();
    let anchor = input[0];
    let anchor_inv = anchor.inverse();
    let mut rel: Vec<Pose> = input.iter().map(|p| anchor_inv.compose(p)).collect();
    rel[0] = Pose::identity();

    let pairs = build_pairs(bundle.frames.len(), &config.intervals);
    if pairs.is_empty() {
        return Err(Error::UnconstrainedProblem);
    }
    let (initial_objective, mut degenerate) =
        objective_over_pairs(bundle, &rel, &pairs, config)?;

    let abort = |iterations: usize, degenerate: usize, message: String| {
        (
            input.clone(),
            ConvergenceRecord {
                initial_objective,
                final_objective: initial_objective,
                iterations,
                converged: false,
                refined: false,
                degenerate_pairs: degenerate,
                message: Some(message),
            },
        )
    };
    if !initial_objective.is_finite() {
        return Ok(abort(0, degenerate, "non-finite initial objective".into()));
    }

    // Quasi-Newton descent (L-BFGS two-loop on gradient history — still
    // strictly first-order information) in a single global chart around the
    // initial relative poses: `x` stacks per-frame `[ω, v]` offsets and
    // `poses(x)` left-composes `exp(ω̂)` and adds `v`. The quasi-Newton
    // metric matters here: per-frame rotation errors are nearly compensable
    // by translations (small-parallax coupling), which bends the likelihood
    // into a curved trench that plain gradient steps crawl along; curvature
    // estimates straighten it. A backtracking Armijo line search with the
    // relative-decrease floor keeps the objective non-increasing, and the
    // run converges when no direction clears the floor.
    let blocks = rel.len() - 1;
    let n_params = 6 * blocks;
    let base = rel;
    let eval_obj = |x: &[f64]| -> Result<(f64, usize)> {
        objective_over_pairs(bundle, &retract_all(&base, x, 1.0), &pairs, config)
    };
    let eval_grad = |x: &[f64]| -> Result<Vec<f64>> {
        let poses = retract_all(&base, x, 1.0);
        let (_, mut g) = match settings.gradient_mode {
            GradientMode::Analytic => gradient_analytic(bundle, &poses, &pairs, config)?,
            GradientMode::FiniteDifference => gradient_fd(bundle, &poses, &pairs, config)?,
        };
        // The dual lanes differentiate increments at the *current* pose;
        // the chart offsets rotations by exp(x̂), so pulling the rotation
        // blocks back needs the SO(3) left Jacobian transpose.
        for b in 0..blocks {
            let w = Vector3::new(x[6 * b], x[6 * b + 1], x[6 * b + 2]);
            let gl = Vector3::new(g[6 * b], g[6 * b + 1], g[6 * b + 2]);
            let gc = so3_left_jacobian(&w).transpose() * gl;
            g[6 * b] = gc.x;
            g[6 * b + 1] = gc.y;
            g[6 * b + 2] = gc.z;
        }
        Ok(g)
    };

    let mut x = vec![0.0; n_params];
    let mut obj = initial_objective;
    let mut grad = match eval_grad(&x) {
        Ok(g) => g,
        Err(e) => return Ok(abort(0, degenerate, format!("gradient unavailable: {e}"))),
    };
    // (s, y, 1/sᵀy) pairs, newest last.
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut small_steps = 0usize;

    for _ in 0..settings.max_iterations {
        iterations += 1;
        if grad.iter().any(|g| !g.is_finite()) {
            return Ok(abort(iterations, degenerate, "non-finite gradient".into()));
        }

        // Two-loop recursion: d = −H·g with H from the stored pairs.
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = vec![0.0; history.len()];
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alphas[i] = a;
            for (dj, yj) in d.iter_mut().zip(y) {
                *dj -= a * yj;
            }
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for dj in d.iter_mut() {
                *dj *= gamma;
            }
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &d);
            for (dj, sj) in d.iter_mut().zip(s) {
                *dj += (alphas[i] - beta) * sj;
            }
        }
        let gd = dot(&grad, &d);
        if gd >= 0.0 {
            // Not a descent direction (stale curvature): fall back to
            // steepest descent.
            history.clear();
            d = grad.iter().map(|g| -g).collect();
        }
        let gd = dot(&grad, &d);

        let floor = settings.tolerance * obj.abs().max(1.0);
        let dnorm = dot(&d, &d).sqrt();
        if dnorm == 0.0 {
            converged = true;
            break;
        }
        let first_trial = if history.is_empty() {
            settings.initial_step / dnorm
        } else {
            1.0
        };
        let armijo = |trial: f64, c_obj: f64| -> bool {
            c_obj.is_finite() && c_obj <= obj + 1e-4 * trial * gd
        };
        let probe = |trial: f64| -> Option<(Vec<f64>, f64, usize)> {
            let cand: Vec<f64> =
                x.iter().zip(&d).map(|(xi, di)| xi + trial * di).collect();
            let (c_obj, c_degen) = eval_obj(&cand).ok()?;
            armijo(trial, c_obj).then_some((cand, c_obj, c_degen))
        };
        let mut trial = first_trial;
        let mut accepted: Option<(Vec<f64>, f64, usize)> = None;
        for _ in 0..30 {
            if let Some(hit) = probe(trial) {
                accepted = Some(hit);
                break;
            }
            trial *= 0.5;
        }
        if accepted.is_some() && trial == first_trial {
            // The unit quasi-Newton step underestimates how far the flat
            // trench directions can move; grow the step while it keeps
            // paying off.
            for _ in 0..10 {
                let wider = trial * 2.0;
                match probe(wider) {
                    Some(hit)
                        if hit.1 < accepted.as_ref().map_or(f64::INFINITY, |a| a.1) =>
                    {
                        accepted = Some(hit);
                        trial = wider;
                    }
                    _ => break,
                }
            }
        }
        let Some((x_new, obj_new, degen_new)) = accepted else {
            if !history.is_empty() {
                // Retry once from a clean steepest-descent state before
                // giving up.
                history.clear();
                continue;
            }
            converged = true;
            break;
        };
        let step_decrease = obj - obj_new;
        let grad_new = match eval_grad(&x_new) {
            Ok(g) => g,
            Err(e) => {
                return Ok(abort(iterations, degenerate, format!("gradient unavailable: {e}")))
            }
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            history.push((s, y, 1.0 / sy));
            if history.len() > 40 {
                history.remove(0);
            }
        }
        x = x_new;
        obj = obj_new;
        degenerate = degen_new;
        grad = grad_new;
        // One starved step can happen mid-descent (a poor curvature pair
        // spoils a direction); only a second consecutive one means the
        // objective has genuinely flattened out.
        if step_decrease <= floor {
            small_steps += 1;
            if small_steps >= 2 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let rel = retract_all(&base, &x, 1.0);
    let mut out = Vec::with_capacity(rel.len());
    out.push(anchor);
    for r in rel.iter().skip(1) {
        out.push(anchor.compose(r));
    }
    Ok((
        out,
        ConvergenceRecord {
            initial_objective,
            final_objective: obj,
            iterations,
            converged,
            refined: true,
            degenerate_pairs: degenerate,
            message: None,
        },
    ))
}

/// Best-fit rigid transform taking `estimate` onto `reference`, for
/// trajectory evaluation.
///
/// The refinement holds the first frame fixed, so its output lives in the
/// gauge of that (possibly wrong) anchor: a rigid transform of the whole
/// trajectory is invisible to the objective and absolute per-frame errors
/// mostly measure the anchor, not the estimate. Standard practice is to
/// align the estimate to the reference first and score what remains. The
/// rotation is the chordal mean (SVD of the summed relative rotations, with
/// a reflection guard); the translation then matches the position means.
pub fn align_rigid(reference: &[Pose], estimate: &[Pose]) -> Result<Pose> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reference poses vs {} estimates",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let mut m = Matrix3::zeros();
    for (a, b) in reference.iter().zip(estimate) {
        m += a.rotation().to_rotation_matrix().into_inner()
            * b.rotation().to_rotation_matrix().into_inner().transpose();
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidInput("rotation average did not converge".into())),
    };
    let sign = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    let t = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| a.translation() - r * b.translation())
        .sum::<Vector3<f64>>()
        / reference.len() as f64;
    Ok(Pose::new(UnitQuaternion::from_matrix(&r), t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::synth::{make_sequence, presets, NoiseSpec, SynthSettings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small synthetic problem: clean depths with a positive reported std
    /// (so likelihoods stay tame), exact matches, `n` frames.
    fn problem(seed: u64, n: usize, intervals: Vec<usize>) -> SequenceBundle {
        let (scene, traj) = presets::cavity(seed);
        let noise = NoiseSpec {
            std_floor_frac: 0.005,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: n,
            sparse_per_frame: 30,
            matches_per_pair: 40,
            match_intervals: intervals.clone(),
        };
        let intr = CameraIntrinsics::centered(40.0, 40.0, 48, 36).unwrap();
        make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap()
    }

    fn config(intervals: Vec<usize>) -> PoseGraphConfig {
        PoseGraphConfig {
            intervals,
            ..PoseGraphConfig::default()
        }
    }

    #[test]
    fn clean_data_at_truth_is_a_stationary_point() {
        // Noise-free depths with a wide reported uncertainty; initialized at
        // the exact trajectory, the refinement must not wander off. What
        // residual pull exists comes from bilinear interpolation of the
        // target depth maps, which this resolution keeps below the bounds.
        let (scene, traj) = presets::cavity(2);
        let noise = NoiseSpec {
            std_floor_frac: 0.1,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings::default();
        let intr = CameraIntrinsics::centered(200.0, 200.0, 224, 168).unwrap();
        let bundle = make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap();
        let cfg = PoseGraphConfig {
            dc_stride: 4,
            ..PoseGraphConfig::default()
        };
        let opt = OptimizerSettings {
            max_iterations: 100,
            ..OptimizerSettings::default()
        };
        let (refined, record) = optimize_poses(&bundle, &cfg, &opt).unwrap();
        assert!(record.refined);
        assert!(record.final_objective <= record.initial_objective);
        for (r, f) in refined.iter().zip(&bundle.frames) {
            assert!(
                r.rotation_angle_to(&f.pose) < 1e-5,
                "rotation moved {}",
                r.rotation_angle_to(&f.pose)
            );
            assert!(
                r.translation_distance_to(&f.pose) < 1e-5,
                "translation moved {}",
                r.translation_distance_to(&f.pose)
            );
        }
    }

    #[test]
    fn noisy_poses_move_back_toward_truth() {
        let (scene, traj) = presets::cavity(6);
        let noise = NoiseSpec {
            std_floor_frac: 0.02,
            pose_rotation_deg: 2.0,
            pose_translation_frac: 0.02,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: 20,
            sparse_per_frame: 30,
            matches_per_pair: 60,
            match_intervals: vec![2, 3],
        };
        let intr = CameraIntrinsics::centered(80.0, 80.0, 96, 72).unwrap();
        let bundle = make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap();
        let gt = bundle.ground_truth.as_ref().unwrap();

        let cfg = PoseGraphConfig {
            intervals: vec![2, 3],
            dc_stride: 2,
            ..PoseGraphConfig::default()
        };
        let opt = OptimizerSettings {
            max_iterations: 300,
            tolerance: 1e-8,
            ..OptimizerSettings::default()
        };
        let (refined, record) = optimize_poses(&bundle, &cfg, &opt).unwrap();
        assert!(record.refined);
        assert!(record.final_objective < record.initial_objective);

        // Median per-frame errors after best-fit rigid alignment (the
        // anchor's own noise is not the refinement's to fix).
        let err = |poses: &[Pose]| -> (f64, f64) {
            let fix = align_rigid(&gt.poses, poses).unwrap();
            let mut rot: Vec<f64> = Vec::new();
            let mut tr: Vec<f64> = Vec::new();
            for (g, p) in gt.poses.iter().zip(poses) {
                let a = fix.compose(p);
                rot.push(g.rotation_angle_to(&a));
                tr.push(g.translation_distance_to(&a));
            }
            rot.sort_by(f64::total_cmp);
            tr.sort_by(f64::total_cmp);
            (rot[rot.len() / 2], tr[tr.len() / 2])
        };
        let before: Vec<Pose> = bundle.frames.iter().map(|f| f.pose).collect();
        let (rot_before, trans_before) = err(&before);
        let (rot_after, trans_after) = err(&refined);
        assert!(
            rot_after < 0.5 * rot_before,
            "median rotation error {rot_before} -> {rot_after}"
        );
        assert!(
            trans_after < 0.5 * trans_before,
            "median translation error {trans_before} -> {trans_after}"
        );
    }

    #[test]
    fn anchor_pose_is_returned_bit_identical() {
        let mut bundle = problem(9, 8, vec![3]);
        // Give the anchor a non-trivial pose to make bit-identity meaningful.
        let twist = Pose::new(
            nalgebra::UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            nalgebra::Vector3::new(0.05, -0.01, 0.02),
        );
        for f in bundle.frames.iter_mut() {
            f.pose = twist.compose(&f.pose);
        }
        if let Some(gt) = bundle.ground_truth.as_mut() {
            for p in gt.poses.iter_mut() {
                *p = twist.compose(p);
            }
        }
        let settings = OptimizerSettings {
            max_iterations: 10,
            ..OptimizerSettings::default()
        };
        let (refined, _) = optimize_poses(&bundle, &config(vec![3]), &settings).unwrap();
        assert_eq!(refined[0].xyzw(), bundle.frames[0].pose.xyzw());
        assert_eq!(refined[0].translation(), bundle.frames[0].pose.translation());
    }

    #[test]
    fn objective_is_tiny_on_clean_data_and_grows_when_perturbed() {
        let bundle = problem(4, 20, vec![2]);
        let cfg = PoseGraphConfig {
            intervals: vec![2],
            w_dc: 1.0,
            w_sf: 100.0,
            epsilon: 1e-8,
            dc_stride: 1,
        };
        let truth: Vec<Pose> = bundle.frames.iter().map(|f| f.pose).collect();
        let (at_truth, degen) = objective(&bundle, &truth, &cfg).unwrap();
        assert_eq!(degen, 0);

        // The flow part alone should be near zero at the truth; measure it
        // separately since the consistency part's log term has an offset.
        let flow_only = PoseGraphConfig {
            w_dc: 0.0,
            ..cfg.clone()
        };
        let (flow_obj, _) = objective(&bundle, &truth, &flow_only).unwrap();
        let pair_count = build_pairs(bundle.frames.len(), &[2]).len();
        assert!(
            flow_obj < 1e-6 * pair_count as f64,
            "flow objective at truth: {flow_obj}"
        );

        let mut moved = truth.clone();
        moved[3] = moved[3].retract(&Vector3::new(0.02, 0.0, 0.0), &Vector3::zeros());
        let (perturbed, _) = objective(&bundle, &moved, &cfg).unwrap();
        assert!(
            perturbed > at_truth,
            "perturbing a pose should increase the objective: {at_truth} -> {perturbed}"
        );
    }

    #[test]
    fn zero_weights_give_zero_objective() {
        let bundle = problem(4, 8, vec![3]);
        let cfg = PoseGraphConfig {
            intervals: vec![3],
            w_dc: 0.0,
            w_sf: 0.0,
            ..PoseGraphConfig::default()
        };
        let truth: Vec<Pose> = bundle.frames.iter().map(|f| f.pose).collect();
        let (obj, _) = objective(&bundle, &truth, &cfg).unwrap();
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn fully_degenerate_problem_is_an_error() {
        // Exile the last frame far off to the side, perpendicular to every
        // other camera's viewing direction: neither frustum sees anything
        // the other images. The configured interval pairs it with frame 0
        // only, and no matches were generated at that interval, so the
        // single pair has neither term.
        let bundle = problem(4, 8, vec![3]);
        let mut exiled = bundle.clone();
        let p = exiled.frames[7].pose;
        exiled.frames[7].pose =
            Pose::new(*p.rotation(), p.translation() + Vector3::new(0.0, 1e3, 0.0));
        let cfg = PoseGraphConfig {
            intervals: vec![7],
            ..PoseGraphConfig::default()
        };
        let poses: Vec<Pose> = exiled.frames.iter().map(|f| f.pose).collect();
        let err = objective(&exiled, &poses, &cfg).unwrap_err();
        assert!(matches!(err, Error::UnconstrainedProblem), "got {err:?}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // The comparison needs a landscape finite differences can see
        // straight: a generous reported std keeps the likelihood's higher
        // derivatives small (truncation), and adjacent, well-overlapped
        // frames keep warp validity stable across the probe offsets (a
        // validity flip inside the stencil would swamp the quotient).
        let (scene, traj) = presets::cavity(12);
        let noise = NoiseSpec {
            std_floor_frac: 0.05,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: 6,
            sparse_per_frame: 30,
            matches_per_pair: 40,
            match_intervals: vec![1],
        };
        let intr = CameraIntrinsics::centered(40.0, 40.0, 48, 36).unwrap();
        let bundle = make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap();
        let cfg = config(vec![1]);
        let pairs = build_pairs(6, &[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            // Random small perturbation of the true poses.
            let mut poses: Vec<Pose> = bundle.frames.iter().map(|f| f.pose).collect();
            for p in poses.iter_mut().skip(1) {
                let omega = Vector3::new(
                    rng.random_range(-0.003..0.003),
                    rng.random_range(-0.003..0.003),
                    rng.random_range(-0.003..0.003),
                );
                let v = Vector3::new(
                    rng.random_range(-0.0015..0.0015),
                    rng.random_range(-0.0015..0.0015),
                    rng.random_range(-0.0015..0.0015),
                );
                *p = p.retract(&omega, &v);
            }
            let (va, ga) = gradient_analytic(&bundle, &poses, &pairs, &cfg).unwrap();
            let (vf, gf) = gradient_fd(&bundle, &poses, &pairs, &cfg).unwrap();
            assert!((va - vf).abs() <= 1e-9 * va.abs().max(1.0));
            for (a, f) in ga.iter().zip(&gf) {
                let scale = a.abs().max(f.abs()).max(1e-3);
                assert!(
                    (a - f).abs() <= 1e-4 * scale,
                    "gradient mismatch: analytic {a}, fd {f}"
                );
            }
        }
    }

    #[test]
    fn objective_never_increases_and_record_is_consistent() {
        let (scene, traj) = presets::cavity(15);
        let noise = NoiseSpec {
            std_floor_frac: 0.005,
            pose_rotation_deg: 1.0,
            ..NoiseSpec::default()
        };
        let settings = SynthSettings {
            frames: 7,
            sparse_per_frame: 30,
            matches_per_pair: 30,
            match_intervals: vec![2],
        };
        let intr = CameraIntrinsics::centered(40.0, 40.0, 48, 36).unwrap();
        let bundle = make_sequence(&scene, &traj, &noise, &settings, &intr).unwrap();
        let opt = OptimizerSettings {
            max_iterations: 25,
            ..OptimizerSettings::default()
        };
        let (_, record) = optimize_poses(&bundle, &config(vec![2]), &opt).unwrap();
        assert!(record.final_objective <= record.initial_objective);
        assert!(record.iterations <= 25);
        assert!(record.refined);
    }
    #[test]
    fn best_fit_alignment_recovers_a_rigid_offset() {
        let bundle = problem(3, 6, vec![2]);
        let gt: Vec<Pose> = bundle.frames.iter().map(|f| f.pose).collect();
        let twist = Pose::new(
            nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.2, -0.1, 0.3)),
            Vector3::new(0.4, -0.2, 0.9),
        );
        let moved: Vec<Pose> = gt.iter().map(|p| twist.compose(p)).collect();
        let fix = align_rigid(&gt, &moved).unwrap();
        for (g, m) in gt.iter().zip(&moved) {
            let back = fix.compose(m);
            assert!(back.rotation_angle_to(g) < 1e-9);
            assert!(back.translation_distance_to(g) < 1e-9);
        }
        assert!(align_rigid(&gt, &moved[..3]).is_err());
        assert!(align_rigid(&[], &[]).is_err());
    }
}
