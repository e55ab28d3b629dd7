//! Comma-separated tables: sparse depth anchors (`frame,u,v,depth`) and
//! feature matches (`frame_a,u_a,v_a,frame_b,u_b,v_b`). One header line,
//! then one record per line. Floats use shortest round-trip formatting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{FeatureMatch, FeatureMatchSet, SparseDepth};

pub const SPARSE_HEADER: &str = "frame,u,v,depth";
pub const MATCHES_HEADER: &str = "frame_a,u_a,v_a,frame_b,u_b,v_b";

/// Write all frames' anchors into one table. Rows are ordered by frame,
/// then row-major by pixel.
pub fn write_sparse_csv(path: &Path, frames: &[(usize, &SparseDepth)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SPARSE_HEADER}")?;
    for (frame_id, sparse) in frames {
        for (u, v, depth) in sparse.iter() {
            writeln!(w, "{frame_id},{u},{v},{depth}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read anchors back, grouped per frame, rasterized to `width x height`.
/// Frames absent from the table simply get no map entry.
pub fn read_sparse_csv(
    path: &Path,
    width: usize,
    height: usize,
) -> Result<BTreeMap<usize, SparseDepth>> {
    let reader = BufReader::new(File::open(path)?);
    let mut result: BTreeMap<usize, SparseDepth> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if lineno == 0 {
            if line != SPARSE_HEADER {
                return Err(Error::Parse(format!(
                    "{}: expected header {SPARSE_HEADER:?}, got {line:?}",
                    path.display()
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                lineno + 1
            )));
        }
        let bad = |what: &str| {
            Error::Parse(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        let frame: usize = fields[0].parse().map_err(|_| bad("frame id"))?;
        let u: usize = fields[1].parse().map_err(|_| bad("u"))?;
        let v: usize = fields[2].parse().map_err(|_| bad("v"))?;
        let depth: f64 = fields[3].parse().map_err(|_| bad("depth"))?;
        if u >= width || v >= height {
            return Err(Error::Parse(format!(
                "{}:{}: pixel ({u}, {v}) outside {width}x{height}",
                path.display(),
                lineno + 1
            )));
        }
        result
            .entry(frame)
            .or_insert_with(|| SparseDepth::empty(width, height))
            .insert(u, v, depth)?;
    }
    Ok(result)
}

pub fn write_matches_csv(path: &Path, matches: &FeatureMatchSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MATCHES_HEADER}")?;
    for m in matches.iter() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            m.frame_a, m.a[0], m.a[1], m.frame_b, m.b[0], m.b[1]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matches_csv(path: &Path) -> Result<FeatureMatchSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut matches = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if lineno == 0 {
            if line != MATCHES_HEADER {
                return Err(Error::Parse(format!(
                    "{}: expected header {MATCHES_HEADER:?}, got {line:?}",
                    path.display()
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 6 fields",
                path.display(),
                lineno + 1
            )));
        }
        let bad = |what: &str| {
            Error::Parse(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        let frame_a: usize = fields[0].parse().map_err(|_| bad("frame_a"))?;
        let u_a: f64 = fields[1].parse().map_err(|_| bad("u_a"))?;
        let v_a: f64 = fields[2].parse().map_err(|_| bad("v_a"))?;
        let frame_b: usize = fields[3].parse().map_err(|_| bad("frame_b"))?;
        let u_b: f64 = fields[4].parse().map_err(|_| bad("u_b"))?;
        let v_b: f64 = fields[5].parse().map_err(|_| bad("v_b"))?;
        matches.push(FeatureMatch {
            frame_a,
            frame_b,
            a: [u_a, v_a],
            b: [u_b, v_b],
        });
    }
    FeatureMatchSet::new(matches)
}
