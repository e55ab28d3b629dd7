//! Trajectory files: one line per frame, `frame_id tx ty tz qx qy qz qw`,
//! whitespace-separated. Poses are camera-to-world, quaternion scalar-last.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every component bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub fn write_trajectory(path: &Path, entries: &[(usize, Pose)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, pose) in entries {
        let t = pose.translation();
        let [qx, qy, qz, qw] = pose.xyzw();
        writeln!(w, "{id} {} {} {} {qx} {qy} {qz} {qw}", t.x, t.y, t.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a trajectory, skipping blank lines and `#` comments. Frame order is
/// file order; ids need not be contiguous.
pub fn read_trajectory(path: &Path) -> Result<Vec<(usize, Pose)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let id: usize = fields[0].parse().map_err(|_| {
            Error::Parse(format!(
                "{}:{}: bad frame id {:?}",
                path.display(),
                lineno + 1,
                fields[0]
            ))
        })?;
        let mut nums = [0.0f64; 7];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}:{}: bad number {:?}",
                    path.display(),
                    lineno + 1,
                    field
                ))
            })?;
        }
        let translation = Vector3::new(nums[0], nums[1], nums[2]);
        let pose = Pose::from_xyzw([nums[3], nums[4], nums[5], nums[6]], translation, 1e-6)?;
        entries.push((id, pose));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use tempfile::tempdir;

    #[test]
    fn poses_round_trip_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trajectory.txt");
        let entries: Vec<(usize, Pose)> = (0..5)
            .map(|i| {
                let rot = UnitQuaternion::from_scaled_axis(Vector3::new(
                    0.1 * i as f64,
                    -0.07,
                    0.003 + i as f64 / 7.0,
                ));
                let t = Vector3::new(i as f64 / 3.0, -1.0 / (i as f64 + 1.0), 0.125);
                (i * 2, Pose::new(rot, t))
            })
            .collect();
        write_trajectory(&path, &entries).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), entries.len());
        for ((ia, pa), (ib, pb)) in entries.iter().zip(&back) {
            assert_eq!(ia, ib);
            assert_eq!(pa.xyzw(), pb.xyzw());
            assert_eq!(pa.translation(), pb.translation());
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trajectory.txt");
        std::fs::write(
            &path,
            "# camera-to-world, scalar-last\n\n3 0 0 0 0 0 0 1\n",
        )
        .unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, 3);
        assert_eq!(back[0].1.xyzw(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tempdir().unwrap();
        let short = dir.path().join("short.txt");
        std::fs::write(&short, "0 1 2 3\n").unwrap();
        assert!(read_trajectory(&short).is_err());

        let non_unit = dir.path().join("nonunit.txt");
        std::fs::write(&non_unit, "0 0 0 0 0 0 0 2\n").unwrap();
        assert!(read_trajectory(&non_unit).is_err());

        let garbage = dir.path().join("garbage.txt");
        std::fs::write(&garbage, "0 a b c 0 0 0 1\n").unwrap();
        assert!(read_trajectory(&garbage).is_err());
    }
}
