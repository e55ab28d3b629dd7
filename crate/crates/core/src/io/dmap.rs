//! Depth raster files: `DMAP` magic, width and height as unsigned 32-bit
//! little-endian, then `width x height` 32-bit little-endian IEEE-754 values,
//! row-major from the top-left pixel. Non-positive values encode invalid
//! pixels, so a raster carries its own mask and parses without an image
//! library.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Grid;

const MAGIC: [u8; 4] = *b"DMAP";

/// Largest side length accepted on read; rejects corrupt headers before they
/// turn into an allocation.
const MAX_SIDE: u32 = 1 << 20;

/// Write a raw raster. `values` is row-major, top-left origin, and must
/// match `width * height`.
pub fn write_dmap(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {width}x{height} raster",
            values.len()
        )));
    }
    if width == 0 || height == 0 || width > MAX_SIDE as usize || height > MAX_SIDE as usize {
        return Err(Error::InvalidInput(format!(
            "raster dimensions {width}x{height} out of range"
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&(width as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a raw raster back: `(width, height, values)` exactly as stored.
pub fn read_dmap(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad magic {magic:?}, expected \"DMAP\"",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let width = u32::from_le_bytes(buf4);
    r.read_exact(&mut buf4)?;
    let height = u32::from_le_bytes(buf4);
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::Parse(format!(
            "{}: implausible dimensions {width}x{height}",
            path.display()
        )));
    }
    let count = width as usize * height as usize;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Parse(format!(
            "{}: trailing bytes after {count} values",
            path.display()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((width as usize, height as usize, values))
}

/// Store a masked grid: valid pixels as their value (cast to 32-bit),
/// invalid pixels as -1.
pub fn write_masked_grid(path: &Path, values: &Grid<f64>, valid: &Grid<bool>) -> Result<()> {
    if !values.same_shape(valid) {
        return Err(Error::DimensionMismatch(
            "raster value/mask shapes differ".into(),
        ));
    }
    let raster: Vec<f32> = values
        .as_slice()
        .iter()
        .zip(valid.as_slice())
        .map(|(&v, &ok)| if ok { v as f32 } else { -1.0 })
        .collect();
    write_dmap(path, values.width(), values.height(), &raster)
}

/// Load a masked grid, taking positive values as valid. Invalid pixels come
/// back as 0.
pub fn read_masked_grid(path: &Path) -> Result<(Grid<f64>, Grid<bool>)> {
    let (width, height, raster) = read_dmap(path)?;
    let mut values = Grid::new_fill(width, height, 0.0f64);
    let mut valid = Grid::new_fill(width, height, false);
    for (i, &v) in raster.iter().enumerate() {
        if v > 0.0 && v.is_finite() {
            values.as_mut_slice()[i] = v as f64;
            valid.as_mut_slice()[i] = true;
        }
    }
    Ok((values, valid))
}
