//! Evaluation: 2-D mask IoU under predicted and ground-truth cameras, L1
//! and SSIM of the textured render, voxel 3-D IoU against the generating
//! primitive, and unsupervised meanshape-selection accuracy.

mod metrics;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor};
use crate::geometry::{Mesh, Pose, Quat};
use crate::model::{ModelError, ModelParams};
use crate::softrender::{render_color, render_silhouette, RenderConfig, RenderError};
use crate::synthdata::{load_sample, primitive, Manifest, Split, SynthError};

pub use metrics::{l1_metric, mask_iou, ssim, voxel_3d_iou, voxelize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("mesh is not watertight")]
    NotWatertight,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Data(#[from] SynthError),
}

/// Inference-mode outputs for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub weights: Vec<f64>,
    /// Weighted meanshape `M`.
    pub meanshape: Mesh,
    /// Deformed shape `M̂`.
    pub shape: Mesh,
    pub pose: Pose,
    /// `3×T×T`.
    pub texture: Tensor,
}

impl Prediction {
    pub fn selected(&self) -> usize {
        argmax(&self.weights)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn rows(t: &Tensor) -> Vec<[f64; 3]> {
    t.data().chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()
}

/// Runs the network without dropout.
pub fn predict(params: &ModelParams, image: &Tensor) -> Result<Prediction, EvalError> {
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    // Dropout is off, so the generator is never drawn from.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let features = bound.encode(image)?;
    let out = bound.predict_shape(features.shape, false, &mut rng)?;
    let pose = bound.regress_pose(features.shape, false, &mut rng)?;
    let texture = bound.decode_texture(features.texture)?;
    let template = params.bank.template();
    let q = pose.rotation.value();
    Ok(Prediction {
        weights: out.weights.value().data().to_vec(),
        meanshape: template
            .with_vertices(rows(&out.meanshape.value()))
            .map_err(ModelError::from)?,
        shape: template
            .with_vertices(rows(&out.vertices.value()))
            .map_err(ModelError::from)?,
        pose: Pose {
            scale: pose.scale.item(),
            translation: [pose.translation.value().data()[0], pose.translation.value().data()[1]],
            rotation: Quat::from_array([q.data()[0], q.data()[1], q.data()[2], q.data()[3]]),
        },
        texture: (*texture.value()).clone(),
    })
}

/// Majority mapping between meanshape indices and classes learned on one
/// split, applied to another.
///
/// With at least as many meanshapes as classes each meanshape takes the
/// majority class of the samples that select it. With fewer, classes that
/// share a meanshape are scored as one class: each class takes the meanshape
/// most of its samples select.
pub fn selection_accuracy(
    fit: &[(usize, usize)],
    score: &[(usize, usize)],
    num_meanshapes: usize,
    num_classes: usize,
) -> f64 {
    if score.is_empty() {
        return f64::NAN;
    }
    let mut counts = vec![vec![0usize; num_classes.max(1)]; num_meanshapes.max(1)];
    for &(sel, label) in fit {
        if sel < counts.len() && label < counts[sel].len() {
            counts[sel][label] += 1;
        }
    }
    let correct = if num_meanshapes >= num_classes {
        let class_of: Vec<Option<usize>> = counts
            .iter()
            .map(|c| {
                let total: usize = c.iter().sum();
                (total > 0).then(|| argmax(&c.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            })
            .collect();
        score
            .iter()
            .filter(|&&(sel, label)| class_of.get(sel).copied().flatten() == Some(label))
            .count()
    } else {
        log::warn!("{num_meanshapes} meanshapes for {num_classes} classes: classes sharing a meanshape are merged");
        let shape_of: Vec<usize> = (0..num_classes)
            .map(|c| argmax(&counts.iter().map(|row| row[c] as f64).collect::<Vec<_>>()))
            .collect();
        score
            .iter()
            .filter(|&&(sel, label)| shape_of.get(label) == Some(&sel))
            .count()
    };
    correct as f64 / score.len() as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub samples: usize,
    pub mask_iou_pred_cam: f64,
    pub mask_iou_gt_cam: f64,
    pub l1: f64,
    pub ssim: f64,
    pub voxel_iou_3d: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub samples: usize,
    pub mask_iou_pred_cam: f64,
    pub mask_iou_gt_cam: f64,
    pub l1: f64,
    pub ssim: f64,
    pub voxel_iou_3d: Option<f64>,
    pub selection_accuracy: Option<f64>,
    /// Needs a pretrained Inception network; always `null`.
    pub fid: Option<f64>,
    pub per_class: BTreeMap<usize, ClassMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub render: RenderConfig,
    /// Voxel grid side for 3-D IoU; `0` skips the metric.
    pub voxel_resolution: usize,
    /// Icosphere level of the ground-truth primitive meshes.
    pub gt_mesh_level: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            voxel_resolution: 32,
            gt_mesh_level: 4,
        }
    }
}

fn binarize(mask: &Tensor) -> Vec<bool> {
    mask.data().iter().map(|&v| v > 0.5).collect()
}

fn masked(image: &Tensor, mask: &Tensor) -> Tensor {
    let n = mask.len();
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= mask.data()[i % n];
    }
    out
}

/// Metrics of one split. Texture metrics compare the render under the
/// ground-truth camera with `I·I_m`; selection accuracy maps meanshapes to
/// classes on the train split.
pub fn evaluate(params: &ModelParams, dataset: &Manifest, split: Split, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    let records: Vec<_> = dataset.split(split).collect();
    if records.is_empty() {
        return Err(EvalError::Invalid(format!("split {split:?} is empty")));
    }
    let render = &config.render;
    let mut per_class: BTreeMap<usize, ClassMetrics> = BTreeMap::new();
    let mut scored = Vec::new();
    let mut sums = ClassMetrics::default();
    for record in &records {
        let sample = load_sample(&dataset.root, record)?;
        let size = sample.mask.shape()[0];
        let cfg = RenderConfig {
            image_size: size,
            ..render.clone()
        };
        let pred = predict(params, &sample.image)?;
        let gt_mask = binarize(&sample.mask);
        let iou_pred = mask_iou(&binarize(&render_silhouette(&pred.shape, &pred.pose, &cfg)?), &gt_mask)?;
        let out = render_color(&pred.shape, &pred.texture, &sample.pose, &cfg)?;
        let iou_gt = mask_iou(&binarize(&out.mask), &gt_mask)?;
        let target = masked(&sample.image, &sample.mask);
        let l1 = l1_metric(&out.rgb, &target)?;
        let s = ssim(&out.rgb, &target)?;
        let voxel = if config.voxel_resolution > 0 {
            let gt = primitive(&record.shape, config.gt_mesh_level)?;
            let v = voxel_3d_iou(
                &pred.shape.normalized_to_unit_sphere(),
                &gt.normalized_to_unit_sphere(),
                config.voxel_resolution,
            )?;
            Some(v)
        } else {
            None
        };
        let entry = per_class.entry(record.label).or_default();
        for m in [entry, &mut sums] {
            m.samples += 1;
            m.mask_iou_pred_cam += iou_pred;
            m.mask_iou_gt_cam += iou_gt;
            m.l1 += l1;
            m.ssim += s;
            if let Some(v) = voxel {
                *m.voxel_iou_3d.get_or_insert(0.0) += v;
            }
        }
        scored.push((pred.selected(), record.label));
    }
    let finish = |m: &mut ClassMetrics| {
        let n = m.samples as f64;
        m.mask_iou_pred_cam /= n;
        m.mask_iou_gt_cam /= n;
        m.l1 /= n;
        m.ssim /= n;
        if let Some(v) = m.voxel_iou_3d.as_mut() {
            *v /= n;
        }
    };
    finish(&mut sums);
    let mut classes = BTreeMap::new();
    for (label, mut m) in per_class {
        finish(&mut m);
        classes.insert(label, m);
    }

    let num_classes = dataset.num_classes();
    let selection_accuracy = if num_classes > 0 {
        let mut fit = Vec::new();
        for record in dataset.split(Split::Train) {
            let sample = load_sample(&dataset.root, record)?;
            fit.push((predict(params, &sample.image)?.selected(), record.label));
        }
        Some(selection_accuracy(&fit, &scored, params.config.num_meanshapes, num_classes))
    } else {
        None
    };
    Ok(EvalReport {
        split,
        samples: records.len(),
        mask_iou_pred_cam: sums.mask_iou_pred_cam,
        mask_iou_gt_cam: sums.mask_iou_gt_cam,
        l1: sums.l1,
        ssim: sums.ssim,
        voxel_iou_3d: sums.voxel_iou_3d,
        selection_accuracy,
        fid: None,
        per_class: classes,
    })
}

#[cfg(test)]
mod tests;
