use std::sync::Arc;

use super::ModelError;
use crate::diff::Tensor;
use crate::geometry::{icosphere, subdivide, LaplacianOperator, Mesh, SubdivisionPlan};

/// `N` vertex sets over one shared face list and UV chart.
#[derive(Clone, Debug)]
pub struct MeanshapeBank {
    /// One `k×3` tensor per meanshape.
    pub vertices: Vec<Arc<Tensor>>,
    /// Icosphere level the bank was created from.
    pub level: u32,
    /// Subdivisions applied since creation.
    pub splits: u32,
    template: Mesh,
    laplacian: LaplacianOperator,
}

impl MeanshapeBank {
    /// `n` copies of the unit icosphere at `level`.
    pub fn spheres(n: usize, level: u32) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyBank);
        }
        let template = icosphere(level)?;
        let v = Arc::new(Tensor::from_rows(&template.vertices));
        Self::assemble(vec![v; n], level, 0, template)
    }

    /// Sphere topology after `splits` subdivisions of the level-`level`
    /// icosphere. Vertex positions are midpoints, not reprojected.
    pub fn topology(level: u32, splits: u32) -> Result<Mesh, ModelError> {
        let mut mesh = icosphere(level)?;
        for _ in 0..splits {
            mesh = subdivide(&mesh)?;
        }
        Ok(mesh)
    }

    /// Rebuilds a bank from stored vertex sets and its topology descriptor.
    pub fn from_vertices(vertices: Vec<Tensor>, level: u32, splits: u32) -> Result<Self, ModelError> {
        if vertices.is_empty() {
            return Err(ModelError::EmptyBank);
        }
        let template = Self::topology(level, splits)?;
        let k = template.num_vertices();
        for v in &vertices {
            if v.shape() != [k, 3] {
                return Err(ModelError::Checkpoint(format!(
                    "bank tensor has shape {:?}, topology needs [{k}, 3]",
                    v.shape()
                )));
            }
        }
        Self::assemble(vertices.into_iter().map(Arc::new).collect(), level, splits, template)
    }

    fn assemble(vertices: Vec<Arc<Tensor>>, level: u32, splits: u32, template: Mesh) -> Result<Self, ModelError> {
        let laplacian = LaplacianOperator::from_faces(&template.faces, template.num_vertices())?;
        Ok(Self {
            vertices,
            level,
            splits,
            template,
            laplacian,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn num_vertices(&self) -> usize {
        self.template.num_vertices()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.template.faces
    }

    /// Shared topology with UV; its vertex positions are the base sphere.
    pub fn template(&self) -> &Mesh {
        &self.template
    }

    pub fn laplacian(&self) -> &LaplacianOperator {
        &self.laplacian
    }

    fn rows(t: &Tensor) -> Vec<[f64; 3]> {
        t.data().chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()
    }

    /// Meanshape `i` as a mesh with the shared faces and UV.
    pub fn mesh(&self, i: usize) -> Result<Mesh, ModelError> {
        Ok(self.template.with_vertices(Self::rows(&self.vertices[i]))?)
    }

    /// `Σ_i w_i V_i` as a mesh.
    pub fn weighted_mesh(&self, w: &[f64]) -> Result<Mesh, ModelError> {
        if w.len() != self.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} weights for {} meanshapes",
                w.len(),
                self.len()
            )));
        }
        let mut acc = vec![0.0; self.num_vertices() * 3];
        for (v, &wi) in self.vertices.iter().zip(w) {
            for (a, x) in acc.iter_mut().zip(v.data()) {
                *a += wi * x;
            }
        }
        Ok(self.template.with_vertices(acc.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())?)
    }

    /// Splits every face 1→4 in every meanshape with one shared plan, so new
    /// vertex `k + e` is the midpoint of edge `e` in all of them. Existing
    /// rows are kept bit-for-bit and new rows are appended.
    pub fn subdivided(&self) -> Result<(Self, SubdivisionPlan), ModelError> {
        let plan = SubdivisionPlan::new(self.faces(), self.num_vertices())?;
        let template = subdivide(&self.template)?;
        let vertices = self
            .vertices
            .iter()
            .map(|v| plan.apply_tensor(v).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let bank = Self::assemble(vertices, self.level, self.splits + 1, template)?;
        Ok((bank, plan))
    }
}

/// Functional form of [`MeanshapeBank::subdivided`].
pub fn subdivide_bank(bank: &MeanshapeBank) -> Result<MeanshapeBank, ModelError> {
    Ok(bank.subdivided()?.0)
}
