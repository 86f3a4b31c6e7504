use std::collections::HashMap;

use super::mesh::{face_edges, Mesh, UvMap};
use super::GeometryError;
use crate::diff::{DiffError, Tensor};

/// Topology of one 1→4 split, computed once and applied to any vertex set
/// sharing the face list. New vertices are appended after the originals in
/// first-encounter order over faces, so every vertex set split with the same
/// plan gets identical indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdivisionPlan {
    num_vertices: usize,
    /// Endpoints of the edge each new vertex bisects, in new-index order.
    edges: Vec<(usize, usize)>,
    faces: Vec<[usize; 3]>,
}

impl SubdivisionPlan {
    pub fn new(faces: &[[usize; 3]], num_vertices: usize) -> Result<Self, GeometryError> {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut incidence: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in faces {
            let mut mids = [0usize; 3];
            for (slot, (a, b)) in face_edges(f).into_iter().enumerate() {
                let key = (a.min(b), a.max(b));
                let count = incidence.entry(key).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(GeometryError::NonManifoldEdge { a: key.0, b: key.1 });
                }
                mids[slot] = *midpoint.entry(key).or_insert_with(|| {
                    edges.push(key);
                    num_vertices + edges.len() - 1
                });
            }
            let [a, b, c] = *f;
            let [ab, bc, ca] = mids;
            new_faces.push([a, ab, ca]);
            new_faces.push([ab, b, bc]);
            new_faces.push([ca, bc, c]);
            new_faces.push([ab, bc, ca]);
        }
        Ok(Self {
            num_vertices,
            edges,
            faces: new_faces,
        })
    }

    pub fn num_new_vertices(&self) -> usize {
        self.edges.len()
    }

    pub fn num_output_vertices(&self) -> usize {
        self.num_vertices + self.edges.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Originals unchanged, midpoints appended. Works for any row width.
    pub fn apply<const N: usize>(&self, rows: &[[f64; N]]) -> Vec<[f64; N]> {
        debug_assert_eq!(rows.len(), self.num_vertices);
        let mut out = rows.to_vec();
        out.extend(self.edges.iter().map(|&(a, b)| {
            let mut m = [0.0; N];
            for (i, v) in m.iter_mut().enumerate() {
                *v = 0.5 * (rows[a][i] + rows[b][i]);
            }
            m
        }));
        out
    }

    /// Same as [`apply`](Self::apply) for a `k×n` tensor.
    pub fn apply_tensor(&self, rows: &Tensor) -> Result<Tensor, DiffError> {
        let Some((k, n)) = rows.dims2() else {
            return Err(DiffError::Rank {
                op: "subdivide",
                expected: 2,
                shape: rows.shape().to_vec(),
            });
        };
        if k != self.num_vertices {
            return Err(DiffError::Shape {
                op: "subdivide",
                lhs: rows.shape().to_vec(),
                rhs: vec![self.num_vertices, n],
            });
        }
        let mut data = rows.data().to_vec();
        for &(a, b) in &self.edges {
            for c in 0..n {
                data.push(0.5 * (rows.data()[a * n + c] + rows.data()[b * n + c]));
            }
        }
        Tensor::new(&[self.num_output_vertices(), n], data)
    }
}

/// Splits every triangle into four through its edge midpoints. Midpoints are
/// not reprojected, so the operator applies to arbitrary shapes. UV corners are
/// split with the same pattern and averaged.
pub fn subdivide(mesh: &Mesh) -> Result<Mesh, GeometryError> {
    let plan = SubdivisionPlan::new(&mesh.faces, mesh.vertices.len())?;
    let uv = match &mesh.uv {
        Some(uv) => Some(subdivide_uv(uv)?),
        None => None,
    };
    Ok(Mesh {
        vertices: plan.apply(&mesh.vertices),
        faces: plan.faces.clone(),
        uv,
    })
}

pub(crate) fn subdivide_uv(uv: &UvMap) -> Result<UvMap, GeometryError> {
    let plan = SubdivisionPlan::new(&uv.faces, uv.coords.len())?;
    Ok(UvMap {
        coords: plan.apply(&uv.coords),
        faces: plan.faces.clone(),
    })
}
