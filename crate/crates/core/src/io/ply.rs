//! PLY mesh files, binary little-endian. Exact layout:
//!
//! ```text
//! ply
//! format binary_little_endian 1.0
//! element vertex <count>
//! property float x
//! property float y
//! property float z
//! property uchar red
//! property uchar green
//! property uchar blue
//! property float uncertainty
//! element face <count>
//! property list uchar int vertex_indices
//! end_header
//! ```
//!
//! followed by packed vertex records (19 bytes each) and face records
//! (1 count byte + three 32-bit indices). Positions and uncertainties are
//! stored at 32-bit precision; colors quantize to 8 bits per channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

const VERTEX_PROPERTIES: [&str; 7] = [
    "property float x",
    "property float y",
    "property float z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
    "property float uncertainty",
];

pub fn write_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    mesh.validate()?;
    if mesh.vertices.len() > u32::MAX as usize {
        return Err(Error::InvalidInput("mesh too large for 32-bit indices".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in VERTEX_PROPERTIES {
        writeln!(w, "{p}")?;
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;

    for ((v, c), &u) in mesh
        .vertices
        .iter()
        .zip(&mesh.colors)
        .zip(&mesh.uncertainty)
    {
        for coord in [v.x, v.y, v.z] {
            w.write_all(&(coord as f32).to_le_bytes())?;
        }
        for channel in c {
            let byte = (channel.clamp(0.0, 1.0) * 255.0).round() as u8;
            w.write_all(&[byte])?;
        }
        w.write_all(&(u as f32).to_le_bytes())?;
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    let header_end = find_header_end(&bytes).ok_or_else(|| {
        Error::Parse(format!("{}: no end_header line", path.display()))
    })?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Parse("non-UTF-8 PLY header".into()))?;

    let lines: Vec<&str> = header
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("comment"))
        .collect();
    let mut at = 0usize;
    expect_line(&lines, &mut at, "ply", path)?;
    expect_line(&lines, &mut at, "format binary_little_endian 1.0", path)?;
    let vertex_count = parse_element(take_line(&lines, &mut at), "vertex", path)?;
    for p in VERTEX_PROPERTIES {
        expect_line(&lines, &mut at, p, path)?;
    }
    let face_count = parse_element(take_line(&lines, &mut at), "face", path)?;
    expect_line(&lines, &mut at, "property list uchar int vertex_indices", path)?;
    expect_line(&lines, &mut at, "end_header", path)?;

    let mut cursor = header_end;
    let need = vertex_count * 19 + face_count * 13;
    if bytes.len() - cursor < need {
        return Err(Error::Parse(format!(
            "{}: expected {need} body bytes, found {}",
            path.display(),
            bytes.len() - cursor
        )));
    }

    let mut mesh = TriangleMesh::default();
    mesh.vertices.reserve(vertex_count);
    mesh.colors.reserve(vertex_count);
    mesh.uncertainty.reserve(vertex_count);
    for _ in 0..vertex_count {
        let x = take_f32(&bytes, &mut cursor) as f64;
        let y = take_f32(&bytes, &mut cursor) as f64;
        let z = take_f32(&bytes, &mut cursor) as f64;
        let rgb = [
            bytes[cursor] as f32 / 255.0,
            bytes[cursor + 1] as f32 / 255.0,
            bytes[cursor + 2] as f32 / 255.0,
        ];
        cursor += 3;
        let u = take_f32(&bytes, &mut cursor) as f64;
        mesh.vertices.push(Vector3::new(x, y, z));
        mesh.colors.push(rgb);
        mesh.uncertainty.push(u);
    }
    for _ in 0..face_count {
        if bytes[cursor] != 3 {
            return Err(Error::Parse(format!(
                "{}: only triangle faces are supported, got a {}-gon",
                path.display(),
                bytes[cursor]
            )));
        }
        cursor += 1;
        let mut tri = [0u32; 3];
        for slot in &mut tri {
            let i = i32::from_le_bytes([
                bytes[cursor],
                bytes[cursor + 1],
                bytes[cursor + 2],
                bytes[cursor + 3],
            ]);
            cursor += 4;
            if i < 0 || i as usize >= vertex_count {
                return Err(Error::Parse(format!(
                    "{}: face index {i} out of range",
                    path.display()
                )));
            }
            *slot = i as u32;
        }
        mesh.triangles.push(tri);
    }
    mesh.validate()?;
    Ok(mesh)
}

fn take_line<'a>(lines: &[&'a str], at: &mut usize) -> Option<&'a str> {
    let line = lines.get(*at).copied();
    *at += 1;
    line
}

fn expect_line(lines: &[&str], at: &mut usize, want: &str, path: &Path) -> Result<()> {
    match take_line(lines, at) {
        Some(got) if got == want => Ok(()),
        got => Err(Error::Parse(format!(
            "{}: expected {want:?}, got {got:?}",
            path.display()
        ))),
    }
}

fn take_f32(bytes: &[u8], cursor: &mut usize) -> f32 {
    let v = f32::from_le_bytes([
        bytes[*cursor],
        bytes[*cursor + 1],
        bytes[*cursor + 2],
        bytes[*cursor + 3],
    ]);
    *cursor += 4;
    v
}

/// Byte offset just past the `end_header` line.
fn find_header_end(bytes: &[u8]) -> Option<usize> {
    const END: &[u8] = b"end_header\n";
    bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
}

fn parse_element(line: Option<&str>, kind: &str, path: &Path) -> Result<usize> {
    let line = line.ok_or_else(|| Error::Parse("truncated PLY header".into()))?;
    let rest = line
        .strip_prefix(&format!("element {kind} "))
        .ok_or_else(|| {
            Error::Parse(format!(
                "{}: expected \"element {kind} <count>\", got {line:?}",
                path.display()
            ))
        })?;
    rest.parse()
        .map_err(|_| Error::Parse(format!("{}: bad {kind} count {rest:?}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_mesh() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.5),
                Vector3::new(0.0, 1.0, -0.25),
                Vector3::new(1.5, 1.5, 1.5),
            ],
            triangles: vec![[0, 1, 2], [1, 3, 2]],
            colors: vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.5019608, 0.5019608, 0.5019608],
            ],
            uncertainty: vec![0.0, 0.125, 0.25, 0.5],
        }
    }

    #[test]
    fn meshes_round_trip_with_identical_counts_and_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mesh.ply");
        let mesh = sample_mesh();
        write_ply(&path, &mesh).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.triangles, mesh.triangles);
        // The sample values are all exactly representable at 32 bits, so
        // the round trip is exact, not merely close.
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.uncertainty, mesh.uncertainty);
        assert_eq!(back.colors, mesh.colors);
    }

    #[test]
    fn second_round_trip_is_bit_stable() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        let mut mesh = sample_mesh();
        // Values that do NOT fit in 32 bits quantize once, then stay fixed.
        mesh.vertices[0] = Vector3::new(1.0 / 3.0, 2.0 / 7.0, 0.1);
        mesh.uncertainty[0] = 1.0 / 3.0;
        write_ply(&a, &mesh).unwrap();
        let once = read_ply(&a).unwrap();
        write_ply(&b, &once).unwrap();
        let twice = read_ply(&b).unwrap();
        assert_eq!(once, twice);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn header_is_exactly_as_documented() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mesh.ply");
        write_ply(&path, &sample_mesh()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let end = find_header_end(&bytes).unwrap();
        let header = std::str::from_utf8(&bytes[..end]).unwrap();
        assert_eq!(
            header,
            "ply\nformat binary_little_endian 1.0\nelement vertex 4\n\
             property float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             property float uncertainty\nelement face 2\n\
             property list uchar int vertex_indices\nend_header\n"
        );
        assert_eq!(bytes.len(), end + 4 * 19 + 2 * 13);
    }

    #[test]
    fn foreign_and_corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let ascii = dir.path().join("ascii.ply");
        std::fs::write(
            &ascii,
            "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n",
        )
        .unwrap();
        assert!(read_ply(&ascii).is_err());

        let path = dir.path().join("trunc.ply");
        write_ply(&path, &sample_mesh()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_ply(&path).is_err());
    }
}
