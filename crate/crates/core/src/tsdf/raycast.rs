//! Depth simulation: render the fused volume back into a camera.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Grid, Pose, SimulatedDepth};
use crate::tsdf::TsdfVolume;

/// Bisection steps used to refine a detected zero crossing.
const REFINE_ITERS: usize = 12;

/// Render a simulated depth map by marching camera rays through the volume.
///
/// Rays advance in steps of half a voxel; the first sign change of the
/// trilinearly interpolated distance from positive to negative between two
/// consecutive valid samples is refined by bisection, and the crossing's
/// camera-frame depth is written out. Pixels whose rays never cross the
/// surface inside the observed region are invalid.
pub fn simulate_depth(
    vol: &TsdfVolume,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<SimulatedDepth> {
    if vol.observed_count() == 0 {
        return Err(Error::EmptyVolume);
    }
    let rot = pose.rotation().to_rotation_matrix();
    let center = *pose.translation();
    let lo = vol.origin();
    let [nx, ny, nz] = vol.dims();
    let vs = vol.voxel_size();
    let hi = lo + vs * Vector3::new((nx - 1) as f64, (ny - 1) as f64, (nz - 1) as f64);

    let rows: Vec<Vec<Option<f64>>> = (0..intr.height)
        .into_par_iter()
        .map(|v| {
            (0..intr.width)
                .map(|u| {
                    let dir = rot * intr.ray(u as f64, v as f64);
                    cast_ray(vol, &center, &dir, &lo, &hi, vs)
                })
                .collect()
        })
        .collect();

    let mut depth = Grid::new_fill(intr.width, intr.height, 0.0);
    let mut valid = Grid::new_fill(intr.width, intr.height, false);
    for (v, row) in rows.iter().enumerate() {
        for (u,sample) in row.iter().enumerate() {
            if let Some(z) = sample {
                depth.set(u, v, *z);
                valid.set(u, v, true);
            }
        }
    }
    SimulatedDepth::new(depth, valid)
}

/// March one ray. `dir` is the world-frame direction of a camera ray whose
/// camera-frame z component is 1, so the ray parameter *is* the camera
/// depth of the sample point. Returns the refined crossing depth.
fn cast_ray(
    vol: &TsdfVolume,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
    voxel_size: f64,
) -> Option<f64> {
    // Clip the ray parameter to the voxel-center hull.
    let mut t_enter = 1e-9f64; // strictly positive camera depth
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / dir[a];
        let tb = (hi[a] - origin[a]) / dir[a];
        let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t_enter = t_enter.max(near);
        t_exit = t_exit.min(far);
    }
    if !(t_exit >= t_enter) {
        return None;
    }

    let step = 0.5 * voxel_size / dir.norm();
    let steps = ((t_exit - t_enter) / step).ceil() as usize;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let t = (t_enter + i as f64 * step).min(t_exit);
        let d = vol.sample_distance(&(origin + t * dir));
        match (prev, d) {
            (Some((tp, dp)), Some(dc)) if dp > 0.0 && dc <= 0.0 => {
                return Some(refine_crossing(vol, origin, dir, tp, dp, t, dc));
            }
            _ => {}
        }
        prev = d.map(|dc| (t, dc));
    }
    None
}

/// Shrink a bracketing interval `[t_pos, t_neg]` (distance positive at the
/// first end, non-positive at the second) by bisection, then interpolate the
/// root linearly. Midpoints that leave the observed region end refinement
/// early with the interval as-is.
fn refine_crossing(
    vol: &TsdfVolume,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    mut t_pos: f64,
    mut d_pos: f64,
    mut t_neg: f64,
    mut d_neg: f64,
) -> f64 {
    for _ in 0..REFINE_ITERS {
        let tm = 0.5 * (t_pos + t_neg);
        match vol.sample_distance(&(origin + tm * dir)) {
            Some(dm) if dm > 0.0 => {
                t_pos = tm;
                d_pos = dm;
            }
            Some(dm) => {
                t_neg = tm;
                d_neg = dm;
            }
            None => break,
        }
    }
    if d_pos > d_neg {
        t_pos + (t_neg - t_pos) * d_pos / (d_pos - d_neg)
    } else {
        0.5 * (t_pos + t_neg)
    }
}
