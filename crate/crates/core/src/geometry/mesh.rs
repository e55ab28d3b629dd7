//! Triangle meshes and point clouds produced by surface extraction.

use std::collections::HashSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Indexed triangle mesh with per-vertex color and uncertainty, as extracted
/// from the fused volume.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex RGB in `[0, 1]`.
    pub colors: Vec<[f32; 3]>,
    /// Per-vertex fused depth standard deviation.
    pub uncertainty: Vec<f64>,
}

impl TriangleMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Structural invariants: attribute lengths match, indices are in range,
    /// no triangle repeats a vertex, coordinates are finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.colors.len() != n || self.uncertainty.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} vertices but {} colors / {} uncertainties",
                n,
                self.colors.len(),
                self.uncertainty.len()
            )));
        }
        for v in &self.vertices {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::InvalidInput("non-finite mesh vertex".into()));
            }
        }
        for t in &self.triangles {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidInput(format!("degenerate triangle {t:?}")));
            }
            for &i in t {
                if i as usize >= n {
                    return Err(Error::InvalidInput(format!(
                        "triangle index {i} out of range ({n} vertices)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: HashSet<(u32, u32)> = HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// Euler characteristic `V - E + F`; 2 for a topological sphere.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Total surface area.
    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = self.vertices[t[0] as usize];
                let b = self.vertices[t[1] as usize];
                let c = self.vertices[t[2] as usize];
                (b - a).cross(&(c - a)).norm() * 0.5
            })
            .sum()
    }

    /// Axis-aligned bounding box of the vertices, `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Some((lo, hi))
    }
}

/// Point cloud, optionally with per-point color and uncertainty carried over
/// from the mesh it was sampled from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f32; 3]>,
    pub uncertainty: Vec<f64>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            colors: Vec::new(),
            uncertainty: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            colors: vec![[0.5; 3]; 4],
            uncertainty: vec![0.0; 4],
        }
    }

    #[test]
    fn tetrahedron_is_a_sphere_topologically() {
        let m = tetrahedron();
        m.validate().unwrap();
        assert_eq!(m.edge_count(), 6);
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn validate_catches_bad_indices() {
        let mut m = tetrahedron();
        m.triangles.push([0, 1, 9]);
        assert!(m.validate().is_err());
        let mut m = tetrahedron();
        m.triangles.push([2, 2, 3]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn area_of_unit_right_triangle() {
        let m = TriangleMesh {
            vertices: vec![
                Vector3::zeros(),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2]],
            colors: vec![[0.0; 3]; 3],
            uncertainty: vec![0.0; 3],
        };
        assert!((m.surface_area() - 0.5).abs() < 1e-12);
    }
}
