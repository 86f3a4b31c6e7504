use serde::{Deserialize, Serialize};

use super::quat::{quat_to_matrix_var, Quat};
use super::GeometryError;
use crate::diff::{DiffError, Var};

/// Weak-perspective camera: rotate, drop depth, scale, translate.
///
/// Image coordinates are normalized device coordinates with `x` to the right
/// and `y` up; the viewer sits on `+z`, so larger depth is nearer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub scale: f64,
    pub translation: [f64; 2],
    pub rotation: Quat,
}

impl Pose {
    /// Normalizes the rotation; the scale must be positive.
    pub fn new(scale: f64, translation: [f64; 2], rotation: Quat) -> Result<Self, GeometryError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::NonPositiveScale(scale));
        }
        Ok(Self {
            scale,
            translation,
            rotation: rotation.normalize()?,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: [0.0, 0.0],
            rotation: Quat::IDENTITY,
        }
    }

    /// `[s, t_x, t_y, q_w, q_x, q_y, q_z]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation;
        [
            self.scale,
            self.translation[0],
            self.translation[1],
            q.w,
            q.x,
            q.y,
            q.z,
        ]
    }

    /// Inverse of [`to_array`](Self::to_array); values are kept verbatim
    /// after checking the quaternion is unit within `1e-6`.
    pub fn from_array(a: [f64; 7]) -> Result<Self, GeometryError> {
        let rotation = Quat::new(a[3], a[4], a[5], a[6]);
        if (rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NonUnitQuaternion(rotation.norm()));
        }
        if !(a[0] > 0.0) {
            return Err(GeometryError::NonPositiveScale(a[0]));
        }
        Ok(Self {
            scale: a[0],
            translation: [a[1], a[2]],
            rotation,
        })
    }
}

/// Image coordinates and depth of every vertex.
pub fn project_weak_perspective(vertices: &[[f64; 3]], pose: &Pose) -> (Vec<[f64; 2]>, Vec<f64>) {
    let m = pose.rotation.to_matrix();
    let mut points = Vec::with_capacity(vertices.len());
    let mut depth = Vec::with_capacity(vertices.len());
    for v in vertices {
        let r = |row: usize| m[row][0] * v[0] + m[row][1] * v[1] + m[row][2] * v[2];
        points.push([
            pose.scale * r(0) + pose.translation[0],
            pose.scale * r(1) + pose.translation[1],
        ]);
        depth.push(r(2));
    }
    (points, depth)
}

/// Tape version of [`project_weak_perspective`]: `vertices: k×3`,
/// `scale: [1]`, `translation: [2]`, `rotation: [4]`. Returns `(k×2, k)`.
pub fn project_var<'t>(
    vertices: Var<'t>,
    scale: Var<'t>,
    translation: Var<'t>,
    rotation: Var<'t>,
) -> Result<(Var<'t>, Var<'t>), DiffError> {
    let k = vertices.value().shape()[0];
    let r = quat_to_matrix_var(rotation)?;
    let rotated = vertices.matmul(r.transpose()?)?;
    let xy = rotated.slice(1, 0, 2)?.scale_by(scale)?.add_row(translation)?;
    let depth = rotated.slice(1, 2, 1)?.reshape(&[k])?;
    Ok((xy, depth))
}

/// The pose seen after spinning the object 180° about the vertical axis,
/// which images as a horizontal mirror.
pub fn rotate_pose_y180(pose: &Pose) -> Pose {
    let q_y180 = Quat::new(0.0, 0.0, 1.0, 0.0);
    Pose {
        scale: pose.scale,
        translation: [-pose.translation[0], pose.translation[1]],
        rotation: q_y180.mul(pose.rotation),
    }
}
