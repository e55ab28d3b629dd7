//! Binary PPM (`P6`) color images — the no-dependency way to ship RGB
//! frames alongside the depth rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::ColorImage;

pub fn write_ppm(path: &Path, image: &ColorImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", image.width(), image.height())?;
    for rgb in image.as_slice() {
        w.write_all(rgb)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<ColorImage> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and `#` comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P6" {
        return Err(Error::Parse(format!("{}: not a P6 PPM", path.display())));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::Parse("bad PPM width".into()))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::Parse("bad PPM height".into()))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::Parse("bad PPM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Parse(format!(
            "{}: only maxval 255 is supported, got {maxval}",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the pixel data.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Parse(format!(
            "{}: expected {need} pixel bytes, found {}",
            path.display(),
            bytes.len().saturating_sub(pos)
        )));
    }
    let pixels: Vec<[u8; 3]> = bytes[pos..pos + need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    ColorImage::from_vec(width, height, pixels)
}
