use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, ModelParams};
use crate::diff::{concat, Gradients, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
/// Below this raw quaternion norm the rotation falls back to the identity.
const DEGENERATE_QUAT: f64 = 1e-12;

/// Network tensors and meanshapes recorded on one tape.
pub struct Bound<'t> {
    pub config: ModelConfig,
    tape: &'t Tape,
    network: HashMap<String, Var<'t>>,
    names: Vec<String>,
    pub bank: Vec<Var<'t>>,
}

/// `shape`: `1×F_shape`, `texture`: `1×F_tex`.
pub struct Features<'t> {
    pub shape: Var<'t>,
    pub texture: Var<'t>,
}

pub struct ShapeOutput<'t> {
    /// `1×N` selection weights.
    pub weights: Var<'t>,
    /// Weighted meanshape `k×3`.
    pub meanshape: Var<'t>,
    /// `ΔV`, `k×3`.
    pub deformation: Var<'t>,
    /// `M̂` vertices, `k×3`.
    pub vertices: Var<'t>,
}

pub struct PoseOutput<'t> {
    /// `[1]`, always positive.
    pub scale: Var<'t>,
    /// `[2]`.
    pub translation: Var<'t>,
    /// Head output before normalization, `[4]`.
    pub raw_rotation: Var<'t>,
    /// Unit quaternion `[4]`.
    pub rotation: Var<'t>,
    /// The raw quaternion was (numerically) zero and `rotation` is the
    /// identity fallback.
    pub degenerate: bool,
}

/// Bilinear resize of a `3×H×W` image to `3×size×size` (pixel-center
/// aligned).
pub fn downsample(image: &Tensor, size: usize) -> Result<Tensor, ModelError> {
    let &[3, h, w] = image.shape() else {
        return Err(ModelError::ImageShape(image.shape().to_vec()));
    };
    if h == 0 || w == 0 {
        return Err(ModelError::ImageShape(image.shape().to_vec()));
    }
    if h == size && w == size {
        return Ok(image.clone());
    }
    let coord = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let f = ((dst as f64 + 0.5) * src_len as f64 / size as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i = f.floor() as usize;
        (i, (i + 1).min(src_len - 1), f - i as f64)
    };
    let d = image.data();
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane = &d[c * h * w..(c + 1) * h * w];
        for y in 0..size {
            let (y0, y1, ay) = coord(y, h);
            for x in 0..size {
                let (x0, x1, ax) = coord(x, w);
                let top = plane[y0 * w + x0] * (1.0 - ax) + plane[y0 * w + x1] * ax;
                let bottom = plane[y1 * w + x0] * (1.0 - ax) + plane[y1 * w + x1] * ax;
                out.push(top * (1.0 - ay) + bottom * ay);
            }
        }
    }
    Ok(Tensor::new(&[3, size, size], out)?)
}

impl ModelParams {
    /// Records every learnable tensor as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind_with(tape, true)
    }

    /// Records every tensor as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind_with(tape, false)
    }

    /// Uses caller-recorded variables, one per entry of
    /// [`named_tensors`](ModelParams::named_tensors) and in that order.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t>]) -> Result<Bound<'t>, ModelError> {
        let names: Vec<String> = self.network.keys().cloned().collect();
        let expected = names.len() + self.bank.len();
        if vars.len() != expected {
            return Err(ModelError::InvalidConfig(format!("{} variables for {expected} tensors", vars.len())));
        }
        let Some(first) = vars.first() else {
            return Err(ModelError::EmptyBank);
        };
        Ok(Bound {
            config: self.config.clone(),
            tape: first.tape(),
            network: names.iter().cloned().zip(vars.iter().copied()).collect(),
            names: names.clone(),
            bank: vars[names.len()..].to_vec(),
        })
    }

    fn bind_with<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let record = |t: &std::sync::Arc<Tensor>| {
            if trainable {
                tape.leaf_shared(t.clone())
            } else {
                tape.constant((**t).clone())
            }
        };
        let network = self.network.iter().map(|(k, v)| (k.clone(), record(v))).collect();
        Bound {
            config: self.config.clone(),
            tape,
            network,
            names: self.network.keys().cloned().collect(),
            bank: self.bank.vertices.iter().map(record).collect(),
        }
    }
}

impl<'t> Bound<'t> {
    fn var(&self, name: &str) -> Result<Var<'t>, ModelError> {
        self.network
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    fn weight(&self, layer: &str) -> Result<Var<'t>, ModelError> {
        self.var(&format!("{layer}.weight"))
    }

    fn bias(&self, layer: &str) -> Result<Var<'t>, ModelError> {
        self.var(&format!("{layer}.bias"))
    }

    fn linear(&self, layer: &str, x: Var<'t>) -> Result<Var<'t>, ModelError> {
        Ok(x.matmul(self.weight(layer)?)?.add_row(self.bias(layer)?)?)
    }

    /// `x · W[rows]` without bias.
    fn partial(&self, layer: &str, x: Var<'t>, start: usize, len: usize) -> Result<Var<'t>, ModelError> {
        Ok(x.matmul(self.weight(layer)?.slice(0, start, len)?)?)
    }

    /// Features of a `3×H×W` image in `[0, 1]`.
    pub fn encode(&self, image: &Tensor) -> Result<Features<'t>, ModelError> {
        let n = self.config.encoder_input;
        let small = downsample(image, n)?;
        let x = self.tape.constant(small.reshaped(&[1, 3 * n * n])?);
        let slope = self.config.leaky_slope;
        let texture = self.linear("enc.fc1", x)?.layer_norm(LN_EPS)?.leaky_relu(slope);
        let shape = self
            .linear("enc.shape", texture)?
            .layer_norm(LN_EPS)?
            .leaky_relu(slope);
        Ok(Features { shape, texture })
    }

    /// Softmax weights `1×N` and the weighted meanshape `k×3`.
    pub fn select_shape(&self, f_shape: Var<'t>) -> Result<(Var<'t>, Var<'t>), ModelError> {
        if self.bank.is_empty() {
            return Err(ModelError::EmptyBank);
        }
        let hidden = self
            .linear("sel.fc1", f_shape)?
            .layer_norm(LN_EPS)?
            .leaky_relu(self.config.leaky_slope);
        let w = self.linear("sel.fc2", hidden)?.softmax(1)?;
        let meanshape = self.blend(w)?;
        Ok((w, meanshape))
    }

    /// `Σ_i w_i V_i` for given `1×N` weights.
    pub fn blend(&self, w: Var<'t>) -> Result<Var<'t>, ModelError> {
        let k = self.bank[0].shape()[0];
        let rows = self
            .bank
            .iter()
            .map(|v| v.reshape(&[1, 3 * k]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(w.matmul(concat(&rows, 0)?)?.reshape(&[k, 3])?)
    }

    /// Per-vertex displacement `k×3` in `(−1, 1)`. Each row depends only on
    /// its own vertex and the shared code `(f_shape, w)`.
    pub fn deform(
        &self,
        f_shape: Var<'t>,
        w: Var<'t>,
        vertices: Var<'t>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var<'t>, ModelError> {
        let k = vertices.shape()[0];
        let h = self.config.deformer_hidden;
        let rate = self.config.deformer_dropout;
        let cond = concat(&[f_shape, w], 1)?;
        let c = cond.shape()[1];

        // The shared code is multiplied once and broadcast over vertices.
        let code1 = self.partial("def.fc1", cond, 3, c)?.add(self.bias("def.fc1")?.reshape(&[1, h])?)?;
        let h1 = self
            .partial("def.fc1", vertices, 0, 3)?
            .add(code1.repeat_rows(k))?
            .relu()
            .dropout(rate, train, rng);
        let h2 = self.linear("def.fc2", h1)?.relu().dropout(rate, train, rng);
        let code3 = self.partial("def.fc3", cond, h + 3, c)?.add(self.bias("def.fc3")?.reshape(&[1, h])?)?;
        let h3 = self
            .partial("def.fc3", h2, 0, h)?
            .add(self.partial("def.fc3", vertices, h, 3)?)?
            .add(code3.repeat_rows(k))?
            .relu();
        let h4 = self.linear("def.fc4", h3)?.relu();
        Ok(self.linear("def.out", h4)?.tanh())
    }

    /// `M̂ = Σ w_i V_i + ΔV`.
    pub fn predict_shape(&self, f_shape: Var<'t>, train: bool, rng: &mut ChaCha8Rng) -> Result<ShapeOutput<'t>, ModelError> {
        let (weights, meanshape) = self.select_shape(f_shape)?;
        let deformation = self.deform(f_shape, weights, meanshape, train, rng)?;
        let vertices = meanshape.add(deformation)?;
        Ok(ShapeOutput {
            weights,
            meanshape,
            deformation,
            vertices,
        })
    }

    pub fn regress_pose(&self, f_shape: Var<'t>, train: bool, rng: &mut ChaCha8Rng) -> Result<PoseOutput<'t>, ModelError> {
        let hidden = self
            .linear("pose.fc1", f_shape)?
            .layer_norm(LN_EPS)?
            .dropout(self.config.pose_dropout, train, rng)
            .leaky_relu(self.config.leaky_slope);
        pose_from_raw(self.linear("pose.out", hidden)?)
    }

    /// `3×T×T` texture in `(0, 1)`.
    pub fn decode_texture(&self, f_tex: Var<'t>) -> Result<Var<'t>, ModelError> {
        let t = self.config.texture_size;
        Ok(self.linear("tex.out", f_tex)?.sigmoid().reshape(&[3, t, t])?)
    }

    /// Gradients in [`ModelParams::named_tensors`] order; tensors the loss
    /// does not reach get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .names
            .iter()
            .map(|n| (n.clone(), grads.wrt(self.network[n])))
            .collect();
        for (i, &v) in self.bank.iter().enumerate() {
            out.push((format!("bank.{i}"), grads.wrt(v)));
        }
        out
    }
}

/// Splits a `1×7` head output into `exp`-scale, translation and quaternion.
pub fn pose_from_raw(raw: Var<'_>) -> Result<PoseOutput<'_>, ModelError> {
    let scale = raw.slice(1, 0, 1)?.exp().reshape(&[1])?;
    let translation = raw.slice(1, 1, 2)?.reshape(&[2])?;
    let q = raw.slice(1, 3, 4)?;
    let raw_rotation = q.reshape(&[4])?;
    let norm = q.row_norms()?;
    let degenerate = norm.item() < DEGENERATE_QUAT;
    let rotation = if degenerate {
        raw.tape().constant(Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]))
    } else {
        raw_rotation.scale_by(norm.powf(-1.0))?
    };
    Ok(PoseOutput {
        scale,
        translation,
        raw_rotation,
        rotation,
        degenerate,
    })
}
