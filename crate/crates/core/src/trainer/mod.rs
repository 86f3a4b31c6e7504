//! Optimization loop: Adam over every learnable tensor, the one-time bank
//! subdivision with its learning-rate drop, symmetry augmentation, CSV loss
//! log and resumable checkpoints.

mod adam;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::geometry::project_var;
use crate::losses::{
    color_loss, deformation_reg, mask_loss, pose_loss, quat_unit_penalty, smooth_loss, style_loss, symmetry_augment,
    total_loss, LossError, LossReport, LossTerms, LossWeights,
};
use crate::model::{load_checkpoint_with, save_checkpoint_with, Bound, ModelConfig, ModelError, ModelParams};
use crate::softrender::{render_color_var, render_silhouette_var, RenderConfig, RenderError};
use crate::synthdata::{Manifest, Split, SynthError, TrainSample};

pub use adam::{adam_step, clip_global_norm, AdamState};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("gradient of {name} is not finite")]
    NonFiniteGradient { name: String },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Data(#[from] SynthError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_after_subdivision: f64,
    /// Epoch index at which the bank is subdivided and the learning rate
    /// drops; `None` means `round(0.7 · epochs)`.
    pub subdivision_epoch: Option<usize>,
    /// With `false` only the learning-rate drop happens (fixed level).
    pub subdivide: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping; `None` disables it.
    pub grad_clip: Option<f64>,
    pub symmetry_probability: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            lr: 1e-4,
            lr_after_subdivision: 1e-5,
            subdivision_epoch: None,
            subdivide: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(10.0),
            symmetry_probability: 0.5,
            checkpoint_every: 50,
            seed: 0,
            weights: LossWeights::default(),
            render: RenderConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// TOML when the extension is `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        let config: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| file_err(path, e))?
        } else {
            serde_json::from_str(&text).map_err(|e| file_err(path, e))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn subdivision_epoch(&self) -> usize {
        self.subdivision_epoch
            .unwrap_or_else(|| ((0.7 * self.epochs as f64).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        let e = self.subdivision_epoch();
        if e == 0 || e > self.epochs {
            return bad(format!("subdivision epoch {e} must be in 1..={}", self.epochs));
        }
        for (name, v) in [("lr", self.lr), ("lr_after_subdivision", self.lr_after_subdivision), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.symmetry_probability) {
            return bad(format!("symmetry_probability must be in [0, 1], got {}", self.symmetry_probability));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        self.weights.validate()?;
        self.render.validate()?;
        self.model.validate()?;
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.subdivision_epoch() {
            self.lr_after_subdivision
        } else {
            self.lr
        }
    }

    /// Bank subdivisions expected once `epochs_done` epochs have finished.
    pub fn splits_after(&self, epochs_done: usize) -> u32 {
        (self.subdivide && epochs_done > self.subdivision_epoch()) as u32
    }

    fn needs_color(&self) -> bool {
        self.weights.color > 0.0 || self.weights.style > 0.0
    }
}

/// Loss of one sample on the tape of `bound`. Shape and texture are
/// rendered at the sample's ground-truth pose; the predicted pose is only
/// supervised by the camera terms.
pub fn sample_loss<'t>(
    params: &ModelParams,
    bound: &Bound<'t>,
    sample: &TrainSample,
    config: &TrainConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Var<'t>, LossReport), TrainError> {
    let n = config.render.image_size;
    if sample.mask.shape() != [n, n] {
        return Err(TrainError::Config(format!(
            "render size {n} does not match a {:?} mask",
            sample.mask.shape()
        )));
    }
    let features = bound.encode(&sample.image)?;
    let shape = bound.predict_shape(features.shape, train, rng)?;
    let pose = bound.regress_pose(features.shape, train, rng)?;
    let tape = shape.vertices.tape();

    let gt = sample.pose.to_array();
    let (xy, depth) = project_var(
        shape.vertices,
        tape.constant(Tensor::vector(vec![gt[0]])),
        tape.constant(Tensor::vector(gt[1..3].to_vec())),
        tape.constant(Tensor::vector(gt[3..].to_vec())),
    )?;
    let faces = params.bank.faces();
    let zero = tape.scalar(0.0);
    let (mask, color, style) = if config.needs_color() {
        let uv = params
            .bank
            .template()
            .uv
            .as_ref()
            .ok_or(RenderError::MissingUv)?;
        let texture = bound.decode_texture(features.texture)?;
        let (rgb, mask) = render_color_var(xy, depth, texture, faces, uv, &config.render)?;
        (
            mask,
            color_loss(rgb, &sample.image, &sample.mask)?,
            style_loss(rgb, &sample.image, &sample.mask)?,
        )
    } else {
        (render_silhouette_var(xy, faces, &config.render)?, zero, zero)
    };
    let laplacian = params.bank.laplacian();
    let terms = LossTerms {
        mask: mask_loss(mask, &sample.mask)?,
        smooth_shape: smooth_loss(laplacian, shape.vertices)?,
        smooth_deformation: smooth_loss(laplacian, shape.deformation)?,
        deformation: deformation_reg(shape.deformation)?,
        pose: pose_loss(pose.scale, pose.translation, pose.rotation, &sample.pose)?,
        quat_norm: quat_unit_penalty(pose.raw_rotation),
        color,
        style,
    };
    Ok(total_loss(&terms, &config.weights)?)
}

/// One optimizer step on the batch-mean loss. Each sample is mirrored with
/// probability `symmetry_probability` before the forward pass.
pub fn train_step(
    batch: &[TrainSample],
    params: &mut ModelParams,
    state: &mut AdamState,
    config: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    // The tape shares parameter storage; it is dropped before the update so
    // Adam writes in place instead of copying every tensor.
    let (mut grads, reports) = {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let scale = 1.0 / batch.len() as f64;
        let mut total: Option<Var> = None;
        let mut reports = Vec::with_capacity(batch.len());
        for sample in batch {
            let flip = config.symmetry_probability > 0.0 && rng.gen_bool(config.symmetry_probability);
            let sample = symmetry_augment(sample, flip);
            let (loss, report) = sample_loss(params, &bound, &sample, config, true, rng)?;
            let loss = loss.scale(scale);
            total = Some(match total {
                Some(t) => t.add(loss)?,
                None => loss,
            });
            reports.push(report);
        }
        let grads = tape.backward(total.expect("non-empty batch"))?;
        (bound.gradients(&grads), reports)
    };
    if let Some(max) = config.grad_clip {
        clip_global_norm(&mut grads, max);
    }
    adam_step(params, &grads, state, lr, config)?;
    Ok(LossReport::mean(&reports))
}

/// What a checkpoint records besides the model and the Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epochs_done: usize,
    pub step: u64,
    pub adam_step: u64,
    /// ChaCha word position of the shared stream (decimal, it is a `u128`).
    pub rng_word_pos: String,
    pub config: TrainConfig,
}

pub const LOG_FILE: &str = "log.csv";
pub const FINAL_CHECKPOINT: &str = "final.mcmr";

pub fn checkpoint_name(epochs_done: usize) -> String {
    format!("epoch-{epochs_done:04}.mcmr")
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub params: ModelParams,
    /// Mean weighted loss of each epoch run in this call.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub log: PathBuf,
    pub checkpoint: PathBuf,
}

fn save_state(
    params: &ModelParams,
    adam: &AdamState,
    state: &TrainerState,
    path: &Path,
) -> Result<(), TrainError> {
    let meta = serde_json::to_value(state).map_err(|e| file_err(path, e))?;
    let extra: Vec<(String, Arc<Tensor>)> = adam
        .to_named()
        .into_iter()
        .map(|(n, t)| (n, Arc::new(t)))
        .collect();
    save_checkpoint_with(params, Some(&meta), &extra, path)?;
    Ok(())
}

struct Resumed {
    params: ModelParams,
    adam: AdamState,
    state: TrainerState,
}

fn load_state(path: &Path, config: &TrainConfig) -> Result<Resumed, TrainError> {
    let (ckpt, extra) = load_checkpoint_with(path)?;
    let meta = ckpt
        .trainer
        .ok_or_else(|| TrainError::Resume(format!("{} holds no trainer state", path.display())))?;
    let state: TrainerState =
        serde_json::from_value(meta).map_err(|e| TrainError::Resume(format!("trainer state: {e}")))?;
    if ckpt.params.config != config.model {
        return Err(TrainError::Resume("model config differs from the checkpoint".into()));
    }
    let expected = config.splits_after(state.epochs_done);
    if ckpt.params.bank.splits != expected {
        return Err(TrainError::Resume(format!(
            "checkpoint bank has {} subdivision(s) after {} epochs, this schedule expects {expected}",
            ckpt.params.bank.splits, state.epochs_done
        )));
    }
    let adam = AdamState::from_named(state.adam_step, extra, &ckpt.params)?;
    Ok(Resumed {
        params: ckpt.params,
        adam,
        state,
    })
}

/// Keeps the log rows written before `step`, so a resumed run appends
/// exactly where the checkpoint left off.
fn open_log(path: &Path, resume_step: Option<u64>) -> Result<fs::File, TrainError> {
    let mut kept = String::new();
    match resume_step {
        Some(step) => {
            let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
            for (i, line) in text.lines().enumerate() {
                let keep = i == 0
                    || line
                        .split(',')
                        .next()
                        .and_then(|s| s.parse::<u64>().ok())
                        .is_some_and(|s| s < step);
                if keep {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        None => {
            kept.push_str(&LossReport::csv_header().join(","));
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| file_err(path, e))?;
    fs::OpenOptions::new().append(true).open(path).map_err(|e| file_err(path, e))
}

fn csv_line(record: Vec<String>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&record).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

/// Trains on the `train` split of `dataset`, writing `log.csv`, periodic
/// `epoch-NNNN.mcmr` checkpoints and `final.mcmr` under `out`. With
/// `resume`, continues from a checkpoint written by an earlier call.
pub fn run(config: &TrainConfig, dataset: &Manifest, out: &Path, resume: Option<&Path>) -> Result<RunSummary, TrainError> {
    config.validate()?;
    let samples = dataset.load_split(Split::Train)?;
    run_on_samples(config, &samples, out, resume)
}

/// [`run`] on samples already in memory.
pub fn run_on_samples(
    config: &TrainConfig,
    samples: &[TrainSample],
    out: &Path,
    resume: Option<&Path>,
) -> Result<RunSummary, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Config("no training samples".into()));
    }
    fs::create_dir_all(out).map_err(|e| file_err(out, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut params, mut adam, start_epoch, mut step) = match resume {
        Some(path) => {
            let r = load_state(path, config)?;
            let pos = r
                .state
                .rng_word_pos
                .parse::<u128>()
                .map_err(|e| TrainError::Resume(format!("rng position: {e}")))?;
            rng.set_word_pos(pos);
            (r.params, r.adam, r.state.epochs_done, r.state.step)
        }
        None => {
            let params = ModelParams::init(&config.model)?;
            let adam = AdamState::new(&params);
            (params, adam, 0, 0)
        }
    };
    let log_path = out.join(LOG_FILE);
    let mut log = open_log(&log_path, resume.map(|_| step))?;

    let sub_epoch = config.subdivision_epoch();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut last = out.join(FINAL_CHECKPOINT);
    for epoch in start_epoch..config.epochs {
        if config.subdivide && epoch == sub_epoch && params.bank.splits == 0 {
            let before = params.network_parameter_count();
            let (bank, _) = params.bank.subdivided()?;
            params.bank = bank;
            adam.grow_bank(&params);
            debug_assert_eq!(before, params.network_parameter_count());
            log::info!(
                "epoch {epoch}: bank subdivided to {} vertices",
                params.bank.num_vertices()
            );
        }
        let lr = config.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let report = train_step(&batch, &mut params, &mut adam, config, lr, &mut rng)?;
            log.write_all(csv_line(report.csv_record(step)).as_bytes())
                .map_err(|e| file_err(&log_path, e))?;
            sum += report.total;
            batches += 1;
            step += 1;
        }
        let mean = sum / batches as f64;
        epoch_losses.push(mean);
        log::info!("epoch {epoch}: mean loss {mean:.6}");

        let done = epoch + 1;
        let state = TrainerState {
            epochs_done: done,
            step,
            adam_step: adam.step,
            rng_word_pos: rng.get_word_pos().to_string(),
            config: config.clone(),
        };
        if done % config.checkpoint_every == 0 || done == config.epochs {
            let path = if done == config.epochs {
                out.join(FINAL_CHECKPOINT)
            } else {
                out.join(checkpoint_name(done))
            };
            save_state(&params, &adam, &state, &path)?;
            last = path;
        }
    }
    log.flush().map_err(|e| file_err(&log_path, e))?;
    Ok(RunSummary {
        params,
        epoch_losses,
        steps: step,
        log: log_path,
        checkpoint: last,
    })
}

#[cfg(test)]
mod tests;
