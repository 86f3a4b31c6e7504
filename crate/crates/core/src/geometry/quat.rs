use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::diff::{Backward, DiffError, Tensor, Var};

/// Quaternion `(w, x, y, z)`; rotations use the unit ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Camera rotation from azimuth (about +y), elevation (about +x) and roll
    /// (about +z), applied in that order.
    pub fn from_euler(azimuth: f64, elevation: f64, roll: f64) -> Self {
        let qa = Self::from_axis_angle([0.0, 1.0, 0.0], azimuth);
        let qe = Self::from_axis_angle([1.0, 0.0, 0.0], elevation);
        let qr = Self::from_axis_angle([0.0, 0.0, 1.0], roll);
        qr.mul(qe).mul(qa)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalize(self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Hamilton product `self ∗ o`.
    pub fn mul(self, o: Quat) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotation matrix of a unit quaternion (row-major).
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        quat_matrix(self.to_array())
    }

    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let m = self.to_matrix();
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

pub fn quat_multiply(a: Quat, b: Quat) -> Quat {
    a.mul(b)
}

pub fn quat_normalize(q: Quat) -> Result<Quat, GeometryError> {
    q.normalize()
}

pub fn quat_to_matrix(q: Quat) -> [[f64; 3]; 3] {
    q.to_matrix()
}

fn quat_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// d R[r][c] / d (w, x, y, z) for the polynomial form above.
fn quat_matrix_jacobian([w, x, y, z]: [f64; 4]) -> [[[f64; 4]; 3]; 3] {
    [
        [
            [0.0, 0.0, -4.0 * y, -4.0 * z],
            [-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w],
            [2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x],
        ],
        [
            [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
            [0.0, -4.0 * x, 0.0, -4.0 * z],
            [-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y],
        ],
        [
            [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
            [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
            [0.0, -4.0 * x, -4.0 * y, 0.0],
        ],
    ]
}

struct QuatMatrixBackward;

impl Backward for QuatMatrixBackward {
    fn name(&self) -> &'static str {
        "quat_to_matrix"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let q: [f64; 4] = inputs[0].data().try_into().unwrap();
        let jac = quat_matrix_jacobian(q);
        let mut gq = [0.0; 4];
        for r in 0..3 {
            for c in 0..3 {
                let g = grad.data()[r * 3 + c];
                for (acc, d) in gq.iter_mut().zip(jac[r][c]) {
                    *acc += g * d;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gq.to_vec()).unwrap())]
    }
}

/// Rotation matrix `3×3` of a 4-vector quaternion on the tape.
pub fn quat_to_matrix_var(q: Var<'_>) -> Result<Var<'_>, DiffError> {
    let qv = q.value();
    if qv.len() != 4 {
        return Err(DiffError::Shape {
            op: "quat_to_matrix",
            lhs: qv.shape().to_vec(),
            rhs: vec![4],
        });
    }
    let m = quat_matrix(qv.data().try_into().unwrap());
    let data = m.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(q
        .tape()
        .push_op(Tensor::new(&[3, 3], data)?, &[q], Box::new(QuatMatrixBackward)))
}
