//! Uniform-area point sampling of extracted meshes.

use std::collections::HashSet;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, TriangleMesh};

/// Oversampling factor before thinning.
const OVERSAMPLE: usize = 4;

/// Sample a mesh down to approximately `target_count` points (within ±10%).
///
/// Points are drawn uniformly by area over the triangles, then thinned on a
/// voxel grid whose cell size is bisected until the kept count lands in the
/// window; if the discrete counts jump across it, the kept set is strided
/// down to the target instead. The same seed always yields the same cloud.
pub fn mesh_to_pointcloud(
    mesh: &TriangleMesh,
    target_count: usize,
    seed: u64,
) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if target_count == 0 {
        return Err(Error::InvalidInput("target_count must be positive".into()));
    }
    mesh.validate()?;

    // Cumulative areas for proportional triangle selection.
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        total += (b - a).cross(&(c - a)).norm() * 0.5;
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateInput(
            "mesh has zero total surface area".into(),
        ));
    }

    let n_samples = target_count.saturating_mul(OVERSAMPLE).max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = PointCloud::default();
    cloud.points.reserve(n_samples);
    for _ in 0..n_samples {
        let pick = rng.random::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c < pick).min(cumulative.len() - 1);
        let t = mesh.triangles[ti];
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        // Square-root warping makes the barycentric draw area-uniform.
        let su = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - su, su * (1.0 - r2), su * r2);
        cloud.points.push(wa * a + wb * b + wc * c);
        let (ca, cb, cc) = (
            mesh.colors[t[0] as usize],
            mesh.colors[t[1] as usize],
            mesh.colors[t[2] as usize],
        );
        let (wa32, wb32, wc32) = (wa as f32, wb as f32, wc as f32);
        cloud.colors.push([
            wa32 * ca[0] + wb32 * cb[0] + wc32 * cc[0],
            wa32 * ca[1] + wb32 * cb[1] + wc32 * cc[1],
            wa32 * ca[2] + wb32 * cb[2] + wc32 * cc[2],
        ]);
        cloud.uncertainty.push(
            wa * mesh.uncertainty[t[0] as usize]
                + wb * mesh.uncertainty[t[1] as usize]
                + wc * mesh.uncertainty[t[2] as usize],
        );
    }

    if target_count >= n_samples {
        return Ok(cloud);
    }
    let window = (
        ((target_count as f64) * 0.9).ceil() as usize,
        ((target_count as f64) * 1.1).floor() as usize,
    );
    let (lo_bound, hi_bound) = match cloud
        .points
        .iter()
        .skip(1)
        .fold((cloud.points[0], cloud.points[0]), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }) {
        (lo, hi) => (lo, hi),
    };
    let diag = (hi_bound - lo_bound).norm().max(1e-12);

    // Bisect the thinning cell size until the kept count fits the window.
    let mut cell_lo = diag * 1e-6;
    let mut cell_hi = diag + 1e-12;
    let mut chosen: Option<Vec<usize>> = None;
    for _ in 0..60 {
        let cell = (cell_lo * cell_hi).sqrt();
        let kept = thin(&cloud.points, &lo_bound, cell);
        if (window.0..=window.1).contains(&kept.len()) {
            chosen = Some(kept);
            break;
        }
        if kept.len() > window.1 {
            cell_lo = cell; // too many points: grow the cells
        } else {
            cell_hi = cell;
        }
    }
    let kept = match chosen {
        Some(k) => k,
        None => {
            // Counts jumped across the window (tiny targets); stride the
            // densest acceptable set down to the target exactly.
            let base = thin(&cloud.points, &lo_bound, cell_lo);
            let base = if base.len() >= target_count {
                base
            } else {
                (0..cloud.points.len()).collect()
            };
            (0..target_count)
                .map(|i| base[i * base.len() / target_count])
                .collect()
        }
    };
    Ok(PointCloud {
        points: kept.iter().map(|&i| cloud.points[i]).collect(),
        colors: kept.iter().map(|&i| cloud.colors[i]).collect(),
        uncertainty: kept.iter().map(|&i| cloud.uncertainty[i]).collect(),
    })
}

/// First-come-per-cell voxel thinning; returns kept indices in input order.
fn thin(points: &[Vector3<f64>], lo: &Vector3<f64>, cell: f64) -> Vec<usize> {
    let mut seen: HashSet<(i64, i64, i64)> = HashSet::new();
    let mut kept = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = (
            ((p.x - lo.x) / cell).floor() as i64,
            ((p.y - lo.y) / cell).floor() as i64,
            ((p.z - lo.z) / cell).floor() as i64,
        );
        if seen.insert(key) {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsdf::{extract_mesh, TsdfVolume, VolumeConfig};

    fn sphere_mesh(n: usize, vs: f64, r_vox: f64) -> (TriangleMesh, Vector3<f64>, f64) {
        let mut vol = TsdfVolume::new(VolumeConfig {
            voxel_size: vs,
            dims: Some([n, n, n]),
            origin: Some([0.0, 0.0, 0.0]),
            ..VolumeConfig::default()
        })
        .unwrap();
        let c = vs * Vector3::repeat((n as f64 - 1.0) / 2.0);
        let radius = r_vox * vs;
        vol.fill_from_sdf(|p| (p - c).norm() - radius, 3.0 * vs, 0.01)
            .unwrap();
        (extract_mesh(&vol).unwrap(), c, radius)
    }

    #[test]
    fn count_lands_within_ten_percent() {
        let (mesh, _, _) = sphere_mesh(36, 0.01, 12.0);
        let cloud = mesh_to_pointcloud(&mesh, 1000, 7).unwrap();
        assert!(
            (900..=1100).contains(&cloud.len()),
            "got {} points",
            cloud.len()
        );
        assert_eq!(cloud.colors.len(), cloud.len());
        assert_eq!(cloud.uncertainty.len(), cloud.len());
    }

    #[test]
    fn sampled_points_stay_on_the_sphere() {
        let (mesh, c, radius) = sphere_mesh(36, 0.01, 12.0);
        let cloud = mesh_to_pointcloud(&mesh, 500, 3).unwrap();
        for p in &cloud.points {
            let r = (p - c).norm();
            assert!((r - radius).abs() < 0.5 * 0.01, "radius {r} vs {radius}");
        }
    }

    #[test]
    fn single_triangle_single_point() {
        let mesh = TriangleMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2]],
            colors: vec![[1.0, 0.0, 0.0]; 3],
            uncertainty: vec![0.5; 3],
        };
        let cloud = mesh_to_pointcloud(&mesh, 1, 42).unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0];
        // Inside the triangle: barycentric coordinates within [0, 1].
        assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 && p.z == 0.0);
        assert_eq!(cloud.colors[0], [1.0, 0.0, 0.0]);
        assert!((cloud.uncertainty[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_cloud() {
        let (mesh, _, _) = sphere_mesh(24, 0.01, 8.0);
        let a = mesh_to_pointcloud(&mesh, 300, 11).unwrap();
        let b = mesh_to_pointcloud(&mesh, 300, 11).unwrap();
        assert_eq!(a, b);
        let c = mesh_to_pointcloud(&mesh, 300, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        assert!(matches!(
            mesh_to_pointcloud(&TriangleMesh::default(), 10, 0),
            Err(Error::EmptyMesh)
        ));
    }
}
