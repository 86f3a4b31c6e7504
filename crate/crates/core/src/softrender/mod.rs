//! Soft rasterization of weak-perspective meshes.
//!
//! Each face contributes a per-pixel probability `D = sigmoid(δ·d²/σ)` where
//! `d` is the distance from the pixel center to the projected triangle's
//! boundary and `δ` is `+1` inside, `−1` outside. The silhouette is the
//! probability that at least one face covers the pixel; colors are blended
//! with weights `D_j·exp(z̄_j/γ)` against a constant background weight.
//!
//! In the color path the barycentric coordinates used for texture lookup and
//! depth interpolation are constants with respect to geometry unless
//! [`RenderConfig::attach_barycentric`] is set. The silhouette is always
//! fully differentiable in the projected vertices.

mod raster;
mod texture;

use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid_f64, Backward, DiffError, Tensor, Var};
use crate::geometry::{project_weak_perspective, Mesh, Pose, UvMap};

use raster::{rasterize, ColorInputs};
pub use texture::sample as sample_texture;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("mesh has no UV map")]
    MissingUv,
    #[error("texture must be 3×H×W, got {0:?}")]
    TextureShape(Vec<usize>),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub image_size: usize,
    /// Sharpness of the face probability, in squared NDC units.
    pub sigma: f64,
    /// Depth temperature of the color blend.
    pub gamma: f64,
    pub background: [f64; 3],
    pub eps_bg: f64,
    /// Differentiate the color path through barycentric coordinates too.
    pub attach_barycentric: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            sigma: 1e-5,
            gamma: 1e-4,
            background: [0.0; 3],
            eps_bg: 1e-3,
            attach_barycentric: false,
        }
    }
}

impl RenderConfig {
    pub fn with_size(image_size: usize) -> Self {
        Self {
            image_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidConfig(m));
        if self.image_size < 8 {
            return bad(format!("image size must be at least 8, got {}", self.image_size));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !self.eps_bg.is_finite() {
            return bad(format!("background weight must be finite, got {}", self.eps_bg));
        }
        Ok(())
    }
}

/// `rgb` is `3×H×W`, `mask` is `H×W`.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub rgb: Tensor,
    pub mask: Tensor,
}

/// Center of pixel `(row, col)` in NDC.
pub fn pixel_center(size: usize, row: usize, col: usize) -> [f64; 2] {
    raster::pixel_center(size, row, col)
}

/// Probability that `pixel` is covered by the projected triangle `tri`.
pub fn face_probability(pixel: [f64; 2], tri: [[f64; 2]; 3], sigma: f64) -> f64 {
    sigmoid_f64(raster::face_logit(pixel, &tri, sigma).0)
}

fn flatten_xy(points: &[[f64; 2]]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

fn check_texture(texture: &Tensor) -> Result<(usize, usize), RenderError> {
    match texture.shape() {
        &[3, h, w] if h > 0 && w > 0 => Ok((h, w)),
        s => Err(RenderError::TextureShape(s.to_vec())),
    }
}

fn check_faces(faces: &[[usize; 3]], k: usize) -> Result<(), RenderError> {
    match faces.iter().flatten().find(|&&v| v >= k) {
        Some(v) => Err(RenderError::Input(format!("face references vertex {v} of {k}"))),
        None => Ok(()),
    }
}

fn check_uv(uv: &UvMap, faces: &[[usize; 3]]) -> Result<(), RenderError> {
    if uv.faces.len() != faces.len() {
        return Err(RenderError::Input(format!(
            "UV map has {} faces, mesh has {}",
            uv.faces.len(),
            faces.len()
        )));
    }
    check_faces(&uv.faces, uv.coords.len())
}

/// Soft silhouette `H×W` of `mesh` under `pose`.
pub fn render_silhouette(mesh: &Mesh, pose: &Pose, config: &RenderConfig) -> Result<Tensor, RenderError> {
    config.validate()?;
    let (points, _) = project_weak_perspective(&mesh.vertices, pose);
    let r = rasterize(&flatten_xy(&points), &mesh.faces, config, None);
    let n = config.image_size;
    Ok(Tensor::new(&[n, n], r.mask)?)
}

/// Textured render of `mesh` under `pose`; `texture` is `3×H_t×W_t`.
pub fn render_color(
    mesh: &Mesh,
    texture: &Tensor,
    pose: &Pose,
    config: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    config.validate()?;
    let uv = mesh.uv.as_ref().ok_or(RenderError::MissingUv)?;
    check_texture(texture)?;
    let (points, depth) = project_weak_perspective(&mesh.vertices, pose);
    let r = rasterize(
        &flatten_xy(&points),
        &mesh.faces,
        config,
        Some(ColorInputs {
            depth: &depth,
            uv_coords: &uv.coords,
            uv_faces: &uv.faces,
            texture,
        }),
    );
    let n = config.image_size;
    let color = r.color.expect("color requested");
    Ok(RenderOutput {
        rgb: Tensor::new(&[3, n, n], color.rgb)?,
        mask: Tensor::new(&[n, n], r.mask)?,
    })
}

fn check_points(xy: &Tensor) -> Result<usize, RenderError> {
    match xy.dims2() {
        Some((k, 2)) => Ok(k),
        _ => Err(RenderError::Input(format!(
            "projected vertices must be k×2, got {:?}",
            xy.shape()
        ))),
    }
}

struct SilhouetteOp {
    faces: Vec<[usize; 3]>,
    config: RenderConfig,
    raster: raster::Raster,
}

impl Backward for SilhouetteOp {
    fn name(&self) -> &'static str {
        "render_silhouette"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = raster::backward(&self.raster, inputs[0].data(), &self.faces, &self.config, None, grad.data(), None);
        vec![Some(Tensor::new(inputs[0].shape(), g.xy).unwrap())]
    }
}

/// Tape version of [`render_silhouette`] taking projected vertices `k×2`.
/// Returns the `H×W` mask.
pub fn render_silhouette_var<'t>(
    xy: Var<'t>,
    faces: &[[usize; 3]],
    config: &RenderConfig,
) -> Result<Var<'t>, RenderError> {
    config.validate()?;
    let points = xy.value();
    let k = check_points(&points)?;
    check_faces(faces, k)?;
    let raster = rasterize(points.data(), faces, config, None);
    let n = config.image_size;
    let out = Tensor::new(&[n, n], raster.mask.clone())?;
    Ok(xy.tape().push_op(
        out,
        &[xy],
        Box::new(SilhouetteOp {
            faces: faces.to_vec(),
            config: config.clone(),
            raster,
        }),
    ))
}

struct ColorOp {
    faces: Vec<[usize; 3]>,
    uv: UvMap,
    config: RenderConfig,
    raster: raster::Raster,
}

impl Backward for ColorOp {
    fn name(&self) -> &'static str {
        "render_color"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let npix = self.config.image_size * self.config.image_size;
        let color = ColorInputs {
            depth: inputs[1].data(),
            uv_coords: &self.uv.coords,
            uv_faces: &self.uv.faces,
            texture: inputs[2],
        };
        let g = raster::backward(
            &self.raster,
            inputs[0].data(),
            &self.faces,
            &self.config,
            Some(&color),
            &grad.data()[3 * npix..],
            Some(&grad.data()[..3 * npix]),
        );
        vec![
            Some(Tensor::new(inputs[0].shape(), g.xy).unwrap()),
            Some(Tensor::new(inputs[1].shape(), g.depth).unwrap()),
            Some(Tensor::new(inputs[2].shape(), g.texture).unwrap()),
        ]
    }
}

/// Tape version of [`render_color`]: projected vertices `k×2`, depths `k`,
/// texture `3×H_t×W_t`. Returns `(rgb 3×H×W, mask H×W)`.
pub fn render_color_var<'t>(
    xy: Var<'t>,
    depth: Var<'t>,
    texture: Var<'t>,
    faces: &[[usize; 3]],
    uv: &UvMap,
    config: &RenderConfig,
) -> Result<(Var<'t>, Var<'t>), RenderError> {
    config.validate()?;
    let points = xy.value();
    let k = check_points(&points)?;
    check_faces(faces, k)?;
    check_uv(uv, faces)?;
    let z = depth.value();
    if z.len() != k {
        return Err(RenderError::Input(format!("{} depths for {k} vertices", z.len())));
    }
    let tex = texture.value();
    check_texture(&tex)?;
    let raster = rasterize(
        points.data(),
        faces,
        config,
        Some(ColorInputs {
            depth: z.data(),
            uv_coords: &uv.coords,
            uv_faces: &uv.faces,
            texture: &tex,
        }),
    );
    let n = config.image_size;
    let mut data = raster.color.as_ref().expect("color requested").rgb.clone();
    data.extend_from_slice(&raster.mask);
    let out = xy.tape().push_op(
        Tensor::new(&[4, n, n], data)?,
        &[xy, depth, texture],
        Box::new(ColorOp {
            faces: faces.to_vec(),
            uv: uv.clone(),
            config: config.clone(),
            raster,
        }),
    );
    let rgb = out.slice(0, 0, 3)?;
    let mask = out.slice(0, 3, 1)?.reshape(&[n, n])?;
    Ok((rgb, mask))
}
