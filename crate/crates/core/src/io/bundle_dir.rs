//! On-disk sequence bundles. A bundle is a directory:
//!
//! ```text
//! bundle/
//!   intrinsics.json                  pinhole parameters
//!   trajectory.txt                   frame_id tx ty tz qx qy qz qw
//!   sparse_depth.csv                 frame,u,v,depth
//!   matches.csv                      frame_a,u_a,v_a,frame_b,u_b,v_b
//!   depth/frame_000000.mean.dmap     predicted depth, one per frame
//!   depth/frame_000000.std.dmap      predicted std, optional
//!   color/frame_000000.ppm           optional RGB
//!   ground_truth/                    optional, written by the generator
//!     trajectory.txt
//!     depth/frame_000000.dmap
//!     scene.json
//! ```
//!
//! Every frame in the trajectory must have a mean depth raster. A missing
//! std raster defaults to 5% of the mean. Missing tables mean "no anchors" /
//! "no matches"; a missing `ground_truth/` means none is available.

use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle::{FrameBundle, GroundTruth, SequenceBundle};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Grid, SparseDepth};
use crate::io::csv::{read_matches_csv, read_sparse_csv, write_matches_csv, write_sparse_csv};
use crate::io::dmap::{read_dmap, read_masked_grid, write_masked_grid};
use crate::io::ppm::{read_ppm, write_ppm};
use crate::io::trajectory::{read_trajectory, write_trajectory};
use crate::synth::SceneSpec;

/// Std assumed when a bundle ships no std rasters, as a fraction of mean.
pub const DEFAULT_STD_FRACTION: f64 = 0.05;

fn frame_file(id: usize, suffix: &str) -> String {
    format!("frame_{id:06}.{suffix}")
}

pub fn save_bundle(dir: &Path, bundle: &SequenceBundle) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir.join("depth"))?;

    let intr_json = serde_json::to_string_pretty(&bundle.intrinsics)?;
    fs::write(dir.join("intrinsics.json"), intr_json + "\n")?;

    let entries: Vec<(usize, crate::geometry::Pose)> =
        bundle.frames.iter().map(|f| (f.frame_id, f.pose)).collect();
    write_trajectory(&dir.join("trajectory.txt"), &entries)?;

    let sparse: Vec<(usize, &SparseDepth)> = bundle
        .frames
        .iter()
        .map(|f| (f.frame_id, &f.sparse))
        .collect();
    write_sparse_csv(&dir.join("sparse_depth.csv"), &sparse)?;
    write_matches_csv(&dir.join("matches.csv"), &bundle.matches)?;

    for f in &bundle.frames {
        let depth_dir = dir.join("depth");
        write_masked_grid(
            &depth_dir.join(frame_file(f.frame_id, "mean.dmap")),
            f.depth.mean(),
            f.depth.valid(),
        )?;
        write_masked_grid(
            &depth_dir.join(frame_file(f.frame_id, "std.dmap")),
            f.depth.std(),
            f.depth.valid(),
        )?;
        if let Some(color) = &f.color {
            fs::create_dir_all(dir.join("color"))?;
            write_ppm(&dir.join("color").join(frame_file(f.frame_id, "ppm")), color)?;
        }
    }

    if let Some(gt) = &bundle.ground_truth {
        let gt_dir = dir.join("ground_truth");
        fs::create_dir_all(gt_dir.join("depth"))?;
        let gt_entries: Vec<(usize, crate::geometry::Pose)> = bundle
            .frames
            .iter()
            .zip(&gt.poses)
            .map(|(f, p)| (f.frame_id, *p))
            .collect();
        write_trajectory(&gt_dir.join("trajectory.txt"), &gt_entries)?;
        for (f, d) in bundle.frames.iter().zip(&gt.depths) {
            write_masked_grid(
                &gt_dir.join("depth").join(frame_file(f.frame_id, "dmap")),
                d.mean(),
                d.valid(),
            )?;
        }
        let scene_json = serde_json::to_string_pretty(&gt.scene)?;
        fs::write(gt_dir.join("scene.json"), scene_json + "\n")?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SequenceBundle> {
    let intr_text = fs::read_to_string(dir.join("intrinsics.json"))?;
    let raw: CameraIntrinsics = serde_json::from_str(&intr_text)?;
    let intrinsics =
        CameraIntrinsics::new(raw.fx, raw.fy, raw.cx, raw.cy, raw.width, raw.height)?;

    let entries = read_trajectory(&dir.join("trajectory.txt"))?;
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: empty trajectory",
            dir.display()
        )));
    }

    let sparse_path = dir.join("sparse_depth.csv");
    let mut sparse_by_frame = if sparse_path.exists() {
        read_sparse_csv(&sparse_path, intrinsics.width, intrinsics.height)?
    } else {
        Default::default()
    };
    let matches_path = dir.join("matches.csv");
    let matches = if matches_path.exists() {
        read_matches_csv(&matches_path)?
    } else {
        Default::default()
    };

    let mut frames = Vec::with_capacity(entries.len());
    for &(id, pose) in &entries {
        let depth = load_depth_map(
            &dir.join("depth").join(frame_file(id, "mean.dmap")),
            Some(&dir.join("depth").join(frame_file(id, "std.dmap"))),
        )?;
        let color_path = dir.join("color").join(frame_file(id, "ppm"));
        let color = if color_path.exists() {
            Some(read_ppm(&color_path)?)
        } else {
            None
        };
        let sparse = sparse_by_frame
            .remove(&id)
            .unwrap_or_else(|| SparseDepth::empty(intrinsics.width, intrinsics.height));
        frames.push(FrameBundle {
            frame_id: id,
            depth,
            color,
            sparse,
            pose,
        });
    }
    if let Some((stray, _)) = sparse_by_frame.into_iter().next() {
        return Err(Error::InvalidInput(format!(
            "sparse_depth.csv references frame {stray}, which has no trajectory entry"
        )));
    }

    let gt_dir = dir.join("ground_truth");
    let ground_truth = if gt_dir.is_dir() {
        Some(load_ground_truth(&gt_dir, &frames)?)
    } else {
        None
    };

    let bundle = SequenceBundle {
        intrinsics,
        frames,
        matches,
        ground_truth,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Read a mean raster plus its optional std raster. The mean's sign mask is
/// authoritative; std values are taken at valid pixels only, and an absent
/// std file falls back to [`DEFAULT_STD_FRACTION`] of the mean.
fn load_depth_map(mean_path: &Path, std_path: Option<&PathBuf>) -> Result<DepthMap> {
    let (mean, valid) = read_masked_grid(mean_path)?;
    let std = match std_path {
        Some(p) if p.exists() => {
            let (w, h, raw) = read_dmap(p)?;
            if w != mean.width() || h != mean.height() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: std raster {w}x{h} vs mean {}x{}",
                    p.display(),
                    mean.width(),
                    mean.height()
                )));
            }
            let mut std = Grid::new_fill(w, h, 0.0f64);
            for (i, &ok) in valid.as_slice().iter().enumerate() {
                if ok {
                    let s = raw[i] as f64;
                    if !(s.is_finite() && s >= 0.0) {
                        return Err(Error::Parse(format!(
                            "{}: bad std {s} at a valid pixel",
                            p.display()
                        )));
                    }
                    std.as_mut_slice()[i] = s;
                }
            }
            std
        }
        _ => {
            let mut std = Grid::new_fill(mean.width(), mean.height(), 0.0f64);
            for (i, &ok) in valid.as_slice().iter().enumerate() {
                if ok {
                    std.as_mut_slice()[i] = DEFAULT_STD_FRACTION * mean.as_slice()[i];
                }
            }
            std
        }
    };
    DepthMap::new(mean, std, valid)
}

fn load_ground_truth(gt_dir: &Path, frames: &[FrameBundle]) -> Result<GroundTruth> {
    let gt_entries = read_trajectory(&gt_dir.join("trajectory.txt"))?;
    let mut poses = Vec::with_capacity(frames.len());
    let mut depths = Vec::with_capacity(frames.len());
    for f in frames {
        let pose = gt_entries
            .iter()
            .find(|(id, _)| *id == f.frame_id)
            .map(|(_, p)| *p)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "ground truth has no pose for frame {}",
                    f.frame_id
                ))
            })?;
        poses.push(pose);
        let (mean, valid) =
            read_masked_grid(&gt_dir.join("depth").join(frame_file(f.frame_id, "dmap")))?;
        let zeros = Grid::new_fill(mean.width(), mean.height(), 0.0f64);
        depths.push(DepthMap::new(mean, zeros, valid)?);
    }
    let scene_text = fs::read_to_string(gt_dir.join("scene.json"))?;
    let scene: SceneSpec = serde_json::from_str(&scene_text)?;
    Ok(GroundTruth {
        poses,
        depths,
        scene,
    })
}
