//! C ABI over the `mcmr` core. Objects cross the boundary as opaque
//! handles released by their `*_free` function. Every fallible call returns
//! an [`McmrStatus`]; on failure `mcmr_last_error` describes the most recent
//! error on the calling thread. Images are planar `3×H×W` doubles in
//! `[0,1]`, masks `H×W`, poses `[scale, tx, ty, qw, qx, qy, qz]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mcmr::diff::Tensor;
use mcmr::eval::{mask_iou, predict, Prediction};
use mcmr::geometry::{export_obj, icosphere, Mesh, Pose};
use mcmr::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use mcmr::softrender::{render_silhouette, RenderConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McmrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Model = 5,
    Render = 6,
    Internal = 7,
}

/// Trained or freshly initialized network with its meanshape bank.
pub struct McmrModel(ModelParams);

/// Triangle mesh.
pub struct McmrMesh(Mesh);

/// Inference output for one image.
pub struct McmrPrediction(Prediction);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(McmrStatus, String);

impl Failure {
    fn new(status: McmrStatus, message: impl ToString) -> Self {
        Self(status, message.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> McmrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            McmrStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            McmrStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(McmrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::new(McmrStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(McmrStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(McmrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, capacity: usize) -> Result<(), Failure> {
    if capacity < src.len() {
        return Err(Failure::new(
            McmrStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::new(McmrStatus::NullPointer, "output buffer is null"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(McmrStatus::NullPointer, "output handle is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_scalar<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(McmrStatus::NullPointer, "output is null"));
    }
    *out = value;
    Ok(())
}

fn pose_arg(p: &[f64]) -> Result<Pose, Failure> {
    let a: [f64; 7] = p.try_into().expect("caller passes 7 values");
    Pose::from_array(a).map_err(|e| Failure::new(McmrStatus::InvalidArgument, e))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mcmr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn mcmr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default architecture with `num_meanshapes` spheres at icosphere `level`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_model_new(num_meanshapes: usize, level: u32, seed: u64, out: *mut *mut McmrModel) -> McmrStatus {
    guard(|| {
        let config = ModelConfig {
            num_meanshapes,
            icosphere_level: level,
            seed,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config).map_err(|e| Failure::new(McmrStatus::InvalidArgument, e))?;
        put(out, McmrModel(params))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_model_load(path: *const c_char, out: *mut *mut McmrModel) -> McmrStatus {
    guard(|| {
        let path = path_arg(path)?;
        let ckpt = load_checkpoint(&path).map_err(|e| Failure::new(McmrStatus::Model, e))?;
        put(out, McmrModel(ckpt.params))
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mcmr_model_save(model: *const McmrModel, path: *const c_char) -> McmrStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let path = path_arg(path)?;
        save_checkpoint(&model.0, &path).map_err(|e| Failure::new(McmrStatus::Io, e))
    })
}

/// # Safety
/// `model` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mcmr_model_free(model: *mut McmrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of meanshapes, or 0 for a null handle.
///
/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mcmr_model_num_meanshapes(model: *const McmrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.bank.len())
}

/// Vertices per meanshape, or 0 for a null handle.
///
/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mcmr_model_num_vertices(model: *const McmrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.bank.num_vertices())
}

/// Runs the network on a `3×height×width` image.
///
/// # Safety
/// `rgb` must hold `3*height*width` doubles and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_predict(
    model: *const McmrModel,
    rgb: *const f64,
    height: usize,
    width: usize,
    out: *mut *mut McmrPrediction,
) -> McmrStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let data = slice_arg(rgb, 3 * height * width, "rgb")?;
        let image = Tensor::new(&[3, height, width], data.to_vec())
            .map_err(|e| Failure::new(McmrStatus::InvalidArgument, e))?;
        let pred = predict(&model.0, &image).map_err(|e| Failure::new(McmrStatus::Model, e))?;
        put(out, McmrPrediction(pred))
    })
}

/// # Safety
/// `prediction` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mcmr_prediction_free(prediction: *mut McmrPrediction) {
    if !prediction.is_null() {
        drop(Box::from_raw(prediction));
    }
}

/// Meanshape weights; `capacity` must be at least the meanshape count.
///
/// # Safety
/// `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_prediction_weights(prediction: *const McmrPrediction, out: *mut f64, capacity: usize) -> McmrStatus {
    guard(|| copy_out(&borrow(prediction, "prediction")?.0.weights, out, capacity))
}

/// Predicted pose as 7 doubles.
///
/// # Safety
/// `out` must be valid for 7 writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_prediction_pose(prediction: *const McmrPrediction, out: *mut f64) -> McmrStatus {
    guard(|| copy_out(&borrow(prediction, "prediction")?.0.pose.to_array(), out, 7))
}

/// Copies the deformed shape, or with `meanshape` nonzero the weighted
/// meanshape, into a new mesh handle.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_prediction_mesh(prediction: *const McmrPrediction, meanshape: i32, out: *mut *mut McmrMesh) -> McmrStatus {
    guard(|| {
        let p = &borrow(prediction, "prediction")?.0;
        put(out, McmrMesh(if meanshape != 0 { p.meanshape.clone() } else { p.shape.clone() }))
    })
}

/// Unit icosphere; level 1 is the icosahedron.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_icosphere(level: u32, out: *mut *mut McmrMesh) -> McmrStatus {
    guard(|| {
        let mesh = icosphere(level).map_err(|e| Failure::new(McmrStatus::InvalidArgument, e))?;
        put(out, McmrMesh(mesh))
    })
}

/// # Safety
/// `mesh` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_free(mesh: *mut McmrMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_num_vertices(mesh: *const McmrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.num_vertices())
}

/// # Safety
/// `mesh` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_num_faces(mesh: *const McmrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.num_faces())
}

/// Vertex positions, `x y z` per vertex.
///
/// # Safety
/// `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_vertices(mesh: *const McmrMesh, out: *mut f64, capacity: usize) -> McmrStatus {
    guard(|| copy_out(&borrow(mesh, "mesh")?.0.flat_vertices(), out, capacity))
}

/// Zero-based vertex indices, three per face.
///
/// # Safety
/// `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_faces(mesh: *const McmrMesh, out: *mut u32, capacity: usize) -> McmrStatus {
    guard(|| {
        let faces: Vec<u32> = borrow(mesh, "mesh")?
            .0
            .faces
            .iter()
            .flatten()
            .map(|&i| i as u32)
            .collect();
        copy_out(&faces, out, capacity)
    })
}

/// # Safety
/// `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mesh_export_obj(mesh: *const McmrMesh, path: *const c_char) -> McmrStatus {
    guard(|| {
        let mesh = borrow(mesh, "mesh")?;
        let path = path_arg(path)?;
        export_obj(&mesh.0, &path).map_err(|e| Failure::new(McmrStatus::Io, e))
    })
}

/// Soft silhouette `size×size` of `mesh` under `pose` with sharpness
/// `sigma`.
///
/// # Safety
/// `pose` must hold 7 doubles and `out` be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_render_silhouette(
    mesh: *const McmrMesh,
    pose: *const f64,
    size: usize,
    sigma: f64,
    out: *mut f64,
    capacity: usize,
) -> McmrStatus {
    guard(|| {
        let mesh = borrow(mesh, "mesh")?;
        let pose = pose_arg(slice_arg(pose, 7, "pose")?)?;
        let config = RenderConfig {
            sigma,
            ..RenderConfig::with_size(size)
        };
        let mask = render_silhouette(&mesh.0, &pose, &config).map_err(|e| Failure::new(McmrStatus::Render, e))?;
        copy_out(mask.data(), out, capacity)
    })
}

/// IoU of two masks of `len` values binarized at 0.5.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mcmr_mask_iou(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> McmrStatus {
    guard(|| {
        let bin = |s: &[f64]| s.iter().map(|&v| v > 0.5).collect::<Vec<_>>();
        let a = bin(slice_arg(a, len, "a")?);
        let b = bin(slice_arg(b, len, "b")?);
        let iou = mask_iou(&a, &b).map_err(|e| Failure::new(McmrStatus::InvalidArgument, e))?;
        write_scalar(out, iou)
    })
}
