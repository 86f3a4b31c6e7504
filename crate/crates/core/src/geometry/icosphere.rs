use std::collections::HashMap;
use std::f64::consts::PI;

use super::mesh::{norm, Mesh, UvMap};
use super::subdivide::SubdivisionPlan;
use super::GeometryError;

pub const MAX_ICOSPHERE_LEVEL: u32 = 7;

fn icosahedron() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|v| unit(*v)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    v.map(|c| c / n)
}

/// Number of 1→4 splits behind an icosphere level. Levels count the
/// icosahedron itself as level 1 (level 3 is the 162-vertex sphere); level 0
/// is accepted as an alias for the bare icosahedron.
pub fn icosphere_splits(level: u32) -> u32 {
    level.saturating_sub(1)
}

/// Unit sphere built by 1→4 splitting an icosahedron, with each split
/// followed by projection onto the sphere. Carries a spherical UV map.
pub fn icosphere(level: u32) -> Result<Mesh, GeometryError> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(GeometryError::LevelTooHigh {
            level,
            max: MAX_ICOSPHERE_LEVEL,
        });
    }
    let (mut vertices, mut faces) = icosahedron();
    for _ in 0..icosphere_splits(level) {
        let plan = SubdivisionPlan::new(&faces, vertices.len())?;
        vertices = plan.apply(&vertices).into_iter().map(unit).collect();
        faces = plan.faces().to_vec();
    }
    let mesh = Mesh::new(vertices, faces)?;
    let uv = seam_split_uv(&mesh, &sphere_uv(&mesh)?);
    mesh.with_uv(uv)
}

/// Spherical coordinates: `u = atan2(y, x) / 2π + 0.5`,
/// `v = asin(z / |p|) / π + 0.5`.
pub fn sphere_uv(mesh: &Mesh) -> Result<Vec<[f64; 2]>, GeometryError> {
    mesh.vertices
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let r = norm(p);
            if r == 0.0 {
                return Err(GeometryError::ZeroNormVertex { index: i });
            }
            let u = p[1].atan2(p[0]) / (2.0 * PI) + 0.5;
            let v = (p[2] / r).clamp(-1.0, 1.0).asin() / PI + 0.5;
            Ok([u, v])
        })
        .collect()
}

/// Builds per-corner UVs. Faces whose corner `u` values span more than 0.5
/// straddle the seam; their low-`u` corners point at duplicated coordinates
/// shifted by +1 so interpolation never wraps across the texture.
pub fn seam_split_uv(mesh: &Mesh, per_vertex: &[[f64; 2]]) -> UvMap {
    let mut coords = per_vertex.to_vec();
    let mut shifted: HashMap<usize, usize> = HashMap::new();
    let faces = mesh
        .faces
        .iter()
        .map(|f| {
            let us = f.map(|i| per_vertex[i][0]);
            let lo = us.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= 0.5 {
                return *f;
            }
            f.map(|i| {
                if per_vertex[i][0] < 0.5 {
                    *shifted.entry(i).or_insert_with(|| {
                        coords.push([per_vertex[i][0] + 1.0, per_vertex[i][1]]);
                        coords.len() - 1
                    })
                } else {
                    i
                }
            })
        })
        .collect::<Vec<[usize; 3]>>();
    // Poles have no defined longitude: give each pole corner its own u, the
    // mean of the face's other two corners.
    let faces = faces
        .into_iter()
        .zip(&mesh.faces)
        .map(|(mut corners, f)| {
            for slot in 0..3 {
                let p = mesh.vertices[f[slot]];
                if p[0].abs() < 1e-12 && p[1].abs() < 1e-12 {
                    let others = [corners[(slot + 1) % 3], corners[(slot + 2) % 3]];
                    let u = 0.5 * (coords[others[0]][0] + coords[others[1]][0]);
                    coords.push([u, coords[corners[slot]][1]]);
                    corners[slot] = coords.len() - 1;
                }
            }
            corners
        })
        .collect();
    UvMap { coords, faces }
}
