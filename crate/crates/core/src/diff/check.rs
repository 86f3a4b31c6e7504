//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Tape, Tensor, Var};

/// Options for [`finite_difference_check_many`].
#[derive(Clone, Debug)]
pub struct FdOptions {
    pub step: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Worst disagreement between the tape gradient and central differences for a
/// scalar function of one tensor, measured as
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, DiffError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, DiffError>,
{
    finite_difference_check_many(
        |tape, xs| f(tape, xs[0]),
        std::slice::from_ref(x),
        &FdOptions {
            step,
            ..FdOptions::default()
        },
    )
}

/// Multi-input version of [`finite_difference_check`].
pub fn finite_difference_check_many<F>(
    f: F,
    inputs: &[Tensor],
    opts: &FdOptions,
) -> Result<f64, DiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, DiffError>,
{
    if !(opts.step > 0.0) {
        return Err(DiffError::InvalidStep(opts.step));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = f(&tape, &vars)?;
        let grads = tape.backward(y)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };
    let eval = |xs: &[Tensor]| -> Result<f64, DiffError> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars)?;
        let v = y.value();
        if v.len() != 1 {
            return Err(DiffError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        let n = inputs[input].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for coord in coords {
            let orig = inputs[input].data()[coord];
            work[input].data_mut()[coord] = orig + opts.step;
            let plus = eval(&work)?;
            work[input].data_mut()[coord] = orig - opts.step;
            let minus = eval(&work)?;
            work[input].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[coord];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(DiffError::NonFinite { input, coord });
            }
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
