use std::collections::BTreeSet;
use std::sync::Arc;

use super::mesh::Mesh;
use super::GeometryError;
use crate::diff::{Backward, DiffError, Tensor, Var};

/// Uniform graph Laplacian: `(L x)_i = x_i - mean_{j ∈ N(i)} x_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianOperator {
    neighbors: Arc<Vec<Vec<usize>>>,
}

pub fn uniform_laplacian(mesh: &Mesh) -> Result<LaplacianOperator, GeometryError> {
    LaplacianOperator::from_faces(&mesh.faces, mesh.vertices.len())
}

impl LaplacianOperator {
    pub fn from_faces(faces: &[[usize; 3]], num_vertices: usize) -> Result<Self, GeometryError> {
        let mut sets = vec![BTreeSet::new(); num_vertices];
        for f in faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        if let Some(i) = sets.iter().position(BTreeSet::is_empty) {
            return Err(GeometryError::IsolatedVertex { index: i });
        }
        Ok(Self {
            neighbors: Arc::new(sets.into_iter().map(|s| s.into_iter().collect()).collect()),
        })
    }

    pub fn size(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Sparse row `i` as `(column, weight)` pairs, diagonal first.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let w = -1.0 / self.neighbors[i].len() as f64;
        std::iter::once((i, 1.0))
            .chain(self.neighbors[i].iter().map(|&j| (j, w)))
            .collect()
    }

    pub fn apply<const N: usize>(&self, x: &[[f64; N]]) -> Vec<[f64; N]> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let inv = 1.0 / nb.len() as f64;
                let mut out = x[i];
                for &j in nb {
                    for c in 0..N {
                        out[c] -= inv * x[j][c];
                    }
                }
                out
            })
            .collect()
    }

    /// `L·X` for `X: k×n` on the tape.
    pub fn apply_var<'t>(&self, x: Var<'t>) -> Result<Var<'t>, DiffError> {
        let xv = x.value();
        let Some((k, n)) = xv.dims2() else {
            return Err(DiffError::Rank {
                op: "laplacian",
                expected: 2,
                shape: xv.shape().to_vec(),
            });
        };
        if k != self.size() {
            return Err(DiffError::Shape {
                op: "laplacian",
                lhs: vec![self.size(), self.size()],
                rhs: xv.shape().to_vec(),
            });
        }
        let out = self.apply_flat(xv.data(), n, false);
        Ok(x.tape().push_op(
            Tensor::new(&[k, n], out)?,
            &[x],
            Box::new(LaplacianBackward {
                op: self.clone(),
                cols: n,
            }),
        ))
    }

    fn apply_flat(&self, x: &[f64], n: usize, transpose: bool) -> Vec<f64> {
        let mut out = x.to_vec();
        for (i, nb) in self.neighbors.iter().enumerate() {
            let w = 1.0 / nb.len() as f64;
            for &j in nb {
                // L[i][j] = -w; transpose scatters row i into column j.
                let (dst, src) = if transpose { (j, i) } else { (i, j) };
                for c in 0..n {
                    out[dst * n + c] -= w * x[src * n + c];
                }
            }
        }
        out
    }
}

struct LaplacianBackward {
    op: LaplacianOperator,
    cols: usize,
}

impl Backward for LaplacianBackward {
    fn name(&self) -> &'static str {
        "laplacian"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = self.op.apply_flat(grad.data(), self.cols, true);
        vec![Some(Tensor::new(inputs[0].shape(), g).unwrap())]
    }
}
