//! Triangle meshes, icospheres, subdivision, the uniform Laplacian, spherical
//! UVs, quaternions, the weak-perspective camera and OBJ I/O.

mod camera;
mod icosphere;
mod laplacian;
mod mesh;
mod obj;
mod quat;
mod subdivide;

pub use camera::{project_var, project_weak_perspective, rotate_pose_y180, Pose};
pub use icosphere::{icosphere, icosphere_splits, seam_split_uv, sphere_uv, MAX_ICOSPHERE_LEVEL};
pub use laplacian::{uniform_laplacian, LaplacianOperator};
pub use mesh::{Mesh, UvMap};
pub use obj::{export_obj, import_obj, parse_obj, write_obj};
pub use quat::{quat_multiply, quat_normalize, quat_to_matrix, quat_to_matrix_var, Quat};
pub use subdivide::{subdivide, SubdivisionPlan};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("icosphere level {level} exceeds the limit of {max}")]
    LevelTooHigh { level: u32, max: u32 },
    #[error("face {face} references vertex {index}, but there are only {len}")]
    FaceIndex { face: usize, index: usize, len: usize },
    #[error("face {face} repeats a vertex")]
    DegenerateFace { face: usize },
    #[error("edge ({a}, {b}) is shared by more than two faces")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("vertex {index} has no neighbors")]
    IsolatedVertex { index: usize },
    #[error("vertex {index} is at the origin")]
    ZeroNormVertex { index: usize },
    #[error("cannot normalize a zero quaternion")]
    ZeroQuaternion,
    #[error("quaternion norm {0} is not 1")]
    NonUnitQuaternion(f64),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("expected {expected} vertices, got {got}")]
    VertexCount { expected: usize, got: usize },
    #[error("uv map has {uv_faces} faces but the mesh has {faces}")]
    UvMismatch { uv_faces: usize, faces: usize },
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
