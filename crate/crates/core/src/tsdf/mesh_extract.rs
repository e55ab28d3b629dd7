//! Marching-cubes surface extraction from the fused volume.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::tsdf::tables::{CORNER_OFFSETS, EDGE_ENDPOINTS, TRIANGLE_TABLE};
use crate::tsdf::TsdfVolume;

/// Extract the zero isosurface of the fused distance field.
///
/// Runs the standard 256-case marching cubes over every cube whose eight
/// corners are all observed. Vertex positions interpolate linearly along the
/// crossing edge; color and uncertainty interpolate the fused per-voxel
/// attributes at the same point (trilinear interpolation restricted to a
/// lattice edge reduces to this lerp). Vertices on shared edges are emitted
/// once, so the mesh is index-connected. The rare ambiguous saddle cases are
/// triangulated by the table as-is, which can leave pinholes; no asymptotic
/// decider is applied.
pub fn extract_mesh(vol: &TsdfVolume) -> Result<TriangleMesh> {
    let [nx, ny, nz] = vol.dims();
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::NoSurface);
    }
    // Vertex deduplication across cubes: an edge is identified by the linear
    // indices of the two voxels it joins.
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut corner_idx = [0usize; 8];
                let mut all_observed = true;
                for (c, &(dx, dy, dz)) in CORNER_OFFSETS.iter().enumerate() {
                    let i = vol.index(x + dx, y + dy, z + dz);
                    corner_idx[c] = i;
                    all_observed &= vol.observed[i];
                }
                if !all_observed {
                    continue;
                }
                let mut case = 0usize;
                for (c, &i) in corner_idx.iter().enumerate() {
                    if vol.d[i] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut tri = [0u32; 3];
                for (slot, &edge) in row.iter().take_while(|&&e| e >= 0).enumerate() {
                    let (a, b) = EDGE_ENDPOINTS[edge as usize];
                    let (ia, ib) = (corner_idx[a], corner_idx[b]);
                    let key = (ia.min(ib), ia.max(ib));
                    let vi = *edge_vertex.entry(key).or_insert_with(|| {
                        let (dxa, dya, dza) = CORNER_OFFSETS[a];
                        let (dxb, dyb, dzb) = CORNER_OFFSETS[b];
                        let pa = vol.voxel_center(x + dxa, y + dya, z + dza);
                        let pb = vol.voxel_center(x + dxb, y + dyb, z + dzb);
                        let (da, db) = (vol.d[ia], vol.d[ib]);
                        let t = da / (da - db);
                        let ca = vol.color[ia];
                        let cb = vol.color[ib];
                        let tf = t as f32;
                        mesh.vertices.push(pa + t * (pb - pa));
                        mesh.colors.push([
                            ca[0] + tf * (cb[0] - ca[0]),
                            ca[1] + tf * (cb[1] - ca[1]),
                            ca[2] + tf * (cb[2] - ca[2]),
                        ]);
                        mesh.uncertainty
                            .push(vol.sigma[ia] + t * (vol.sigma[ib] - vol.sigma[ia]));
                        (mesh.vertices.len() - 1) as u32
                    });
                    tri[slot % 3] = vi;
                    if slot % 3 == 2 {
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    if mesh.triangles.is_empty() {
        return Err(Error::NoSurface);
    }
    mesh.validate()?;
    Ok(mesh)
}
