use std::collections::BTreeMap;

use super::{TrainConfig, TrainError};
use crate::diff::Tensor;
use crate::model::ModelParams;

/// First and second moments per learnable tensor, keyed like
/// [`ModelParams::named_tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, Tensor::zeros(t.shape())))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Pads the bank moments with zero rows after a subdivision; existing
    /// rows keep their state.
    pub fn grow_bank(&mut self, params: &ModelParams) {
        let k = params.bank.num_vertices();
        for moments in [&mut self.m, &mut self.v] {
            for (name, t) in moments.iter_mut() {
                if name.starts_with("bank.") && t.shape()[0] < k {
                    let mut data = t.data().to_vec();
                    data.resize(k * 3, 0.0);
                    *t = Tensor::new(&[k, 3], data).unwrap();
                }
            }
        }
    }

    /// `adam.m/<name>` and `adam.v/<name>` tensors for a checkpoint.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let m = self.m.iter().map(|(n, t)| (format!("adam.m/{n}"), t.clone()));
        let v = self.v.iter().map(|(n, t)| (format!("adam.v/{n}"), t.clone()));
        m.chain(v).collect()
    }

    /// Inverse of [`to_named`](Self::to_named), checked against `params`.
    pub fn from_named(step: u64, named: Vec<(String, Tensor)>, params: &ModelParams) -> Result<Self, TrainError> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in named {
            if let Some(n) = name.strip_prefix("adam.m/") {
                m.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix("adam.v/") {
                v.insert(n.to_string(), t);
            }
        }
        for (name, p) in params.named_tensors() {
            for (kind, map) in [("m", &m), ("v", &v)] {
                match map.get(&name) {
                    Some(t) if t.shape() == p.shape() => {}
                    _ => {
                        return Err(TrainError::Resume(format!(
                            "Adam {kind} moment for {name} missing or mis-shaped"
                        )))
                    }
                }
            }
        }
        Ok(Self { step, m, v })
    }
}

/// Rescales all gradients together so their joint L2 norm is at most `max`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(String, Tensor)], max: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for (_, g) in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Bias-corrected Adam. Every gradient is checked before any parameter
/// moves, so a failed step leaves `params` and `state` untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[(String, Tensor)],
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(TrainError::NonFiniteGradient { name: name.clone() });
        }
        let ok = params.tensor_mut(name).is_some_and(|p| p.shape() == g.shape());
        if !ok {
            return Err(TrainError::Config(format!("gradient for unknown or mis-shaped tensor {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (config.beta1, config.beta2, config.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.tensor_mut(name).expect("checked above");
        let (m, v) = (m.data_mut(), v.data_mut());
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}
