use std::collections::{BTreeSet, HashMap};

use super::GeometryError;

/// Texture coordinates stored per face corner so that seam vertices can carry
/// two `u` values while sharing one 3-D position.
#[derive(Clone, Debug, PartialEq)]
pub struct UvMap {
    pub coords: Vec<[f64; 2]>,
    /// Parallel to [`Mesh::faces`]; indices into `coords`.
    pub faces: Vec<[usize; 3]>,
}

/// Triangle mesh with counter-clockwise faces (viewed from outside).
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Option<UvMap>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        validate_faces(&faces, vertices.len())?;
        Ok(Self {
            vertices,
            faces,
            uv: None,
        })
    }

    pub fn with_uv(mut self, uv: UvMap) -> Result<Self, GeometryError> {
        if uv.faces.len() != self.faces.len() {
            return Err(GeometryError::UvMismatch {
                uv_faces: uv.faces.len(),
                faces: self.faces.len(),
            });
        }
        for (f, face) in uv.faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= uv.coords.len()) {
                return Err(GeometryError::FaceIndex {
                    face: f,
                    index: bad,
                    len: uv.coords.len(),
                });
            }
        }
        self.uv = Some(uv);
        Ok(self)
    }

    /// Same topology and UV, new positions.
    pub fn with_vertices(&self, vertices: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::VertexCount {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            uv: self.uv.clone(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Unique undirected edges `(lo, hi)` in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| face_edges(f))
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        set.into_iter().collect()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// Number of faces incident to each undirected edge.
    pub fn edge_face_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for f in &self.faces {
            for (a, b) in face_edges(f) {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_face_counts().values().all(|&c| c == 2)
    }

    pub fn face_normal(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        cross(sub(b, a), sub(c, a))
    }

    /// Signed volume enclosed by a closed mesh (positive for outward faces).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Largest vertex distance from the origin.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| dot(*v, *v).sqrt())
            .fold(0.0, f64::max)
    }

    /// Uniformly rescaled so that the farthest vertex lies on the unit sphere.
    pub fn normalized_to_unit_sphere(&self) -> Self {
        let r = self.bounding_radius();
        let s = if r > 0.0 { 1.0 / r } else { 1.0 };
        Self {
            vertices: self.vertices.iter().map(|v| v.map(|c| c * s)).collect(),
            faces: self.faces.clone(),
            uv: self.uv.clone(),
        }
    }

    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| v.iter().copied()).collect()
    }
}

pub(crate) fn validate_faces(faces: &[[usize; 3]], num_vertices: usize) -> Result<(), GeometryError> {
    for (f, face) in faces.iter().enumerate() {
        if let Some(&bad) = face.iter().find(|&&i| i >= num_vertices) {
            return Err(GeometryError::FaceIndex {
                face: f,
                index: bad,
                len: num_vertices,
            });
        }
        if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
            return Err(GeometryError::DegenerateFace { face: f });
        }
    }
    Ok(())
}

pub(crate) fn face_edges(f: &[usize; 3]) -> [(usize, usize); 3] {
    [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
