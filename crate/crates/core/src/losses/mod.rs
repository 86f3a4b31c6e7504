//! Training objectives. Every norm is averaged over pixels or vertices so the
//! weights keep their meaning across image sizes and subdivision levels.

mod lab;

use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Tensor, Var};
use crate::geometry::{rotate_pose_y180, LaplacianOperator, Pose};
use crate::synthdata::TrainSample;

pub use lab::{rgb_to_lab, rgb_to_lab_image, rgb_to_lab_pixel};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("{what} quaternion has norm {norm}, expected 1")]
    NonUnitQuaternion { what: &'static str, norm: f64 },
    #[error("loss weight {name} is negative or not finite: {value}")]
    BadWeight { name: &'static str, value: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// `λ1..λ9`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mask: f64,
    pub smooth_shape: f64,
    pub smooth_deformation: f64,
    pub deformation: f64,
    pub pose: f64,
    pub quat_norm: f64,
    pub color: f64,
    pub style: f64,
    /// Kept for schema compatibility; the perceptual term is always 0.
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::pascal3d()
    }
}

impl LossWeights {
    pub const NAMES: [&'static str; 9] = [
        "mask",
        "smooth_shape",
        "smooth_deformation",
        "deformation",
        "pose",
        "quat_norm",
        "color",
        "style",
        "perceptual",
    ];

    pub fn pascal3d() -> Self {
        Self::from_array([100.0, 6.0, 1.8, 0.05, 20.0, 2.0, 0.03, 0.05, 0.8])
    }

    pub fn cub() -> Self {
        Self::from_array([20.0, 1.2, 0.18, 0.005, 2.0, 0.1, 0.12, 0.02, 3.2])
    }

    pub fn zero() -> Self {
        Self::from_array([0.0; 9])
    }

    pub fn from_array(l: [f64; 9]) -> Self {
        Self {
            mask: l[0],
            smooth_shape: l[1],
            smooth_deformation: l[2],
            deformation: l[3],
            pose: l[4],
            quat_norm: l[5],
            color: l[6],
            style: l[7],
            perceptual: l[8],
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.mask,
            self.smooth_shape,
            self.smooth_deformation,
            self.deformation,
            self.pose,
            self.quat_norm,
            self.color,
            self.style,
            self.perceptual,
        ]
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in Self::NAMES.into_iter().zip(self.to_array()) {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(LossError::BadWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Unweighted terms in `λ` order plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: [f64; 9],
    pub total: f64,
}

impl LossReport {
    pub fn new(terms: [f64; 9], weights: &LossWeights) -> Self {
        let total = terms.iter().zip(weights.to_array()).map(|(t, w)| t * w).sum();
        Self { terms, total }
    }

    pub fn csv_header() -> Vec<String> {
        let mut h = vec!["step".to_string()];
        h.extend(LossWeights::NAMES.iter().map(|s| s.to_string()));
        h.push("total".into());
        h
    }

    pub fn csv_record(&self, step: u64) -> Vec<String> {
        let mut r = vec![step.to_string()];
        r.extend(self.terms.iter().map(|v| v.to_string()));
        r.push(self.total.to_string());
        r
    }

    /// Element-wise mean of several reports (batch averaging).
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            for (a, b) in out.terms.iter_mut().zip(r.terms) {
                *a += b / n;
            }
            out.total += r.total / n;
        }
        out
    }
}

/// Mean squared difference between predicted and target masks.
pub fn mask_loss<'t>(predicted: Var<'t>, target: &Tensor) -> Result<Var<'t>, LossError> {
    let t = predicted.tape().constant(target.clone());
    Ok(predicted.sub(t)?.square().mean())
}

/// Mean over vertices of `‖(L X)_i‖₂`.
pub fn smooth_loss<'t>(laplacian: &LaplacianOperator, x: Var<'t>) -> Result<Var<'t>, LossError> {
    Ok(laplacian.apply_var(x)?.row_norms()?.mean())
}

/// Mean over vertices of `‖Δv_j‖₂`.
pub fn deformation_reg(dv: Var<'_>) -> Result<Var<'_>, LossError> {
    Ok(dv.row_norms()?.mean())
}

fn check_unit(what: &'static str, q: &[f64]) -> Result<(), LossError> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(LossError::NonUnitQuaternion { what, norm });
    }
    Ok(())
}

/// `(ŝ − s)² + ‖t̂ − t‖² + (1 − |⟨q, q̂⟩|)` for a predicted scale `[1]`,
/// translation `[2]` and unit quaternion `[4]`.
pub fn pose_loss<'t>(
    scale: Var<'t>,
    translation: Var<'t>,
    rotation: Var<'t>,
    target: &Pose,
) -> Result<Var<'t>, LossError> {
    let tape = scale.tape();
    let gt = target.to_array();
    check_unit("predicted", rotation.value().data())?;
    check_unit("target", &gt[3..])?;
    let ds = scale.sub(tape.constant(Tensor::vector(vec![gt[0]])))?.square().sum();
    let dt = translation
        .sub(tape.constant(Tensor::vector(gt[1..3].to_vec())))?
        .square()
        .sum();
    let dot = rotation.mul(tape.constant(Tensor::vector(gt[3..].to_vec())))?.sum();
    let geo = dot.abs().neg().add_scalar(1.0);
    Ok(ds.add(dt)?.add(geo)?)
}

/// `(‖q‖² − 1)²` on the raw head output.
pub fn quat_unit_penalty(raw: Var<'_>) -> Var<'_> {
    raw.square().sum().add_scalar(-1.0).square()
}

/// Per-element weights selecting `channels` of the pixels where
/// `mask > 0.5`, normalized to average over the selection.
fn interior_weights(mask: &Tensor, channels: &[usize]) -> Tensor {
    let n = mask.len();
    let inside: Vec<usize> = (0..n).filter(|&p| mask.data()[p] > 0.5).collect();
    let mut w = vec![0.0; 3 * n];
    if !inside.is_empty() {
        let v = 1.0 / (inside.len() * channels.len()) as f64;
        for &c in channels {
            for &p in &inside {
                w[c * n + p] = v;
            }
        }
    }
    let mut shape = vec![3];
    shape.extend_from_slice(mask.shape());
    Tensor::new(&shape, w).unwrap()
}

fn lab_loss<'t>(
    rendered: Var<'t>,
    image: &Tensor,
    mask: &Tensor,
    channels: &[usize],
) -> Result<Var<'t>, LossError> {
    let tape = rendered.tape();
    let n = mask.len();
    if rendered.value().shape() != image.shape() || image.len() != 3 * n {
        return Err(DiffError::Shape {
            op: "lab_loss",
            lhs: rendered.shape(),
            rhs: image.shape().to_vec(),
        }
        .into());
    }
    let mut masked = image.clone();
    for c in 0..3 {
        for p in 0..n {
            masked.data_mut()[c * n + p] *= mask.data()[p];
        }
    }
    let target = tape.constant(rgb_to_lab_image(&masked));
    let w = tape.constant(interior_weights(mask, channels));
    Ok(rgb_to_lab(rendered).sub(target)?.square().mul(w)?.sum())
}

/// Mean squared AB difference between the render and `I·I_m` over pixels
/// with `I_m > 0.5`.
pub fn color_loss<'t>(rendered: Var<'t>, image: &Tensor, mask: &Tensor) -> Result<Var<'t>, LossError> {
    lab_loss(rendered, image, mask, &[1, 2])
}

/// Mean squared L difference, same support as [`color_loss`].
pub fn style_loss<'t>(rendered: Var<'t>, image: &Tensor, mask: &Tensor) -> Result<Var<'t>, LossError> {
    lab_loss(rendered, image, mask, &[0])
}

/// The individual terms of one sample, in `λ` order (perceptual omitted).
pub struct LossTerms<'t> {
    pub mask: Var<'t>,
    pub smooth_shape: Var<'t>,
    pub smooth_deformation: Var<'t>,
    pub deformation: Var<'t>,
    pub pose: Var<'t>,
    pub quat_norm: Var<'t>,
    pub color: Var<'t>,
    pub style: Var<'t>,
}

/// `Σ λ_i · term_i` on the tape and its report.
pub fn total_loss<'t>(terms: &LossTerms<'t>, weights: &LossWeights) -> Result<(Var<'t>, LossReport), LossError> {
    weights.validate()?;
    let list = [
        terms.mask,
        terms.smooth_shape,
        terms.smooth_deformation,
        terms.deformation,
        terms.pose,
        terms.quat_norm,
        terms.color,
        terms.style,
    ];
    let lambdas = weights.to_array();
    let mut total = list[0].scale(lambdas[0]);
    for (v, &l) in list.iter().zip(&lambdas).skip(1) {
        total = total.add(v.scale(l))?;
    }
    let mut values = [0.0; 9];
    for (slot, v) in values.iter_mut().zip(&list) {
        *slot = v.item();
    }
    let report = LossReport::new(values, weights);
    Ok((total, report))
}

/// Mirrors a `…×H×W` tensor left to right.
pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let w = *t.shape().last().expect("image tensor");
    let mut out = t.clone();
    for (row_out, row_in) in out.data_mut().chunks_mut(w).zip(t.data().chunks(w)) {
        for (o, i) in row_out.iter_mut().zip(row_in.iter().rev()) {
            *o = *i;
        }
    }
    out
}

/// With `apply`, the pose turned 180° about the vertical axis and the
/// image and mask mirrored; otherwise the sample unchanged.
pub fn symmetry_augment(sample: &TrainSample, apply: bool) -> TrainSample {
    if !apply {
        return sample.clone();
    }
    TrainSample {
        image: flip_horizontal(&sample.image),
        mask: flip_horizontal(&sample.mask),
        pose: rotate_pose_y180(&sample.pose),
    }
}
