//! The reconstruction network: a compact image encoder feeding four heads
//! (meanshape selection, per-vertex deformation, pose, texture) plus the
//! learnable meanshape bank.

mod bank;
mod checkpoint;
mod forward;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Tensor};
use crate::geometry::GeometryError;

pub use bank::{subdivide_bank, MeanshapeBank};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_with, save_checkpoint,
    save_checkpoint_with, Checkpoint, CHECKPOINT_VERSION,
};
pub use forward::{downsample, pose_from_raw, Bound, Features, PoseOutput, ShapeOutput};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("meanshape bank is empty")]
    EmptyBank,
    #[error("expected a 3×H×W image, got shape {0:?}")]
    ImageShape(Vec<usize>),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of meanshapes `N`.
    pub num_meanshapes: usize,
    /// Icosphere level the bank starts from.
    pub icosphere_level: u32,
    /// Side of the square image fed to the encoder after downsampling.
    pub encoder_input: usize,
    /// Width of the encoder hidden layer, which doubles as `f_tex`.
    pub texture_features: usize,
    pub shape_features: usize,
    pub selector_hidden: usize,
    pub deformer_hidden: usize,
    pub deformer_dropout: f64,
    pub pose_hidden: usize,
    pub pose_dropout: f64,
    /// Side of the square predicted texture.
    pub texture_size: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_meanshapes: 2,
            icosphere_level: 3,
            encoder_input: 32,
            texture_features: 256,
            shape_features: 64,
            selector_hidden: 64,
            deformer_hidden: 128,
            deformer_dropout: 0.2,
            pose_hidden: 64,
            pose_dropout: 0.5,
            texture_size: 32,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("num_meanshapes", self.num_meanshapes),
            ("encoder_input", self.encoder_input),
            ("texture_features", self.texture_features),
            ("shape_features", self.shape_features),
            ("selector_hidden", self.selector_hidden),
            ("deformer_hidden", self.deformer_hidden),
            ("pose_hidden", self.pose_hidden),
            ("texture_size", self.texture_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(if name == "num_meanshapes" {
                    ModelError::EmptyBank
                } else {
                    ModelError::InvalidConfig(format!("{name} must be positive"))
                });
            }
        }
        for (name, p) in [("deformer_dropout", self.deformer_dropout), ("pose_dropout", self.pose_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::InvalidConfig(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Name, input width and output width of every linear layer.
    pub(crate) fn layers(&self) -> Vec<(&'static str, usize, usize)> {
        let n = self.num_meanshapes;
        let cond = self.shape_features + n;
        let h = self.deformer_hidden;
        let t = self.texture_size;
        vec![
            ("enc.fc1", 3 * self.encoder_input * self.encoder_input, self.texture_features),
            ("enc.shape", self.texture_features, self.shape_features),
            ("sel.fc1", self.shape_features, self.selector_hidden),
            ("sel.fc2", self.selector_hidden, n),
            ("def.fc1", 3 + cond, h),
            ("def.fc2", h, h),
            ("def.fc3", h + 3 + cond, h),
            ("def.fc4", h, h),
            ("def.out", h, 3),
            ("pose.fc1", self.shape_features, self.pose_hidden),
            ("pose.out", self.pose_hidden, 7),
            ("tex.out", self.texture_features, 3 * t * t),
        ]
    }
}

/// All learnable state. Network tensors are keyed `"{layer}.weight"`
/// (`in×out`) and `"{layer}.bias"`.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub network: BTreeMap<String, Arc<Tensor>>,
    pub bank: MeanshapeBank,
}

impl ModelParams {
    /// Uniform `±1/√in` initialization from `config.seed`, except: the last
    /// deformer layer is zero (so the first prediction is the meanshape
    /// itself) and the pose bias starts at the identity quaternion.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut network = BTreeMap::new();
        for (name, fan_in, fan_out) in config.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-bound..bound)).collect() };
            let mut weight = draw(fan_in * fan_out);
            let mut bias = draw(fan_out);
            if name == "def.out" {
                weight.fill(0.0);
                bias.fill(0.0);
            }
            if name == "pose.out" {
                bias = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
            }
            network.insert(
                format!("{name}.weight"),
                Arc::new(Tensor::new(&[fan_in, fan_out], weight)?),
            );
            network.insert(format!("{name}.bias"), Arc::new(Tensor::vector(bias)));
        }
        let bank = MeanshapeBank::spheres(config.num_meanshapes, config.icosphere_level)?;
        Ok(Self {
            config: config.clone(),
            network,
            bank,
        })
    }

    /// Learnable scalars outside the meanshape bank.
    pub fn network_parameter_count(&self) -> usize {
        self.network.values().map(|t| t.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.network_parameter_count() + self.bank.vertices.iter().map(|v| v.len()).sum::<usize>()
    }

    /// `(name, tensor)` for every learnable tensor: network tensors in name
    /// order, then `bank.{i}`.
    pub fn named_tensors(&self) -> Vec<(String, Arc<Tensor>)> {
        let mut out: Vec<(String, Arc<Tensor>)> =
            self.network.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for (i, v) in self.bank.vertices.iter().enumerate() {
            out.push((format!("bank.{i}"), v.clone()));
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if let Some(i) = name.strip_prefix("bank.").and_then(|i| i.parse::<usize>().ok()) {
            return self.bank.vertices.get_mut(i).map(Arc::make_mut);
        }
        self.network.get_mut(name).map(Arc::make_mut)
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }
}

#[cfg(test)]
mod tests;
