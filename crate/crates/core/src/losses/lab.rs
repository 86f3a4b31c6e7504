//! sRGB → CIELAB (D65). The white point is the XYZ of sRGB white under the
//! same matrix, so `(1, 1, 1)` maps to `a = b = 0` exactly.

use crate::diff::{Backward, Tensor, Var};

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const EPSILON: f64 = 0.008856;
const KAPPA_SLOPE: f64 = 7.787;

fn white() -> [f64; 3] {
    SRGB_TO_XYZ.map(|r| r.iter().sum())
}

fn linearize(c: f64) -> (f64, f64) {
    if c <= 0.04045 {
        (c / 12.92, 1.0 / 12.92)
    } else {
        let b = (c + 0.055) / 1.055;
        (b.powf(2.4), 2.4 / 1.055 * b.powf(1.4))
    }
}

fn f_lab(t: f64) -> (f64, f64) {
    if t > EPSILON {
        let c = t.cbrt();
        (c, 1.0 / (3.0 * c * c))
    } else {
        (KAPPA_SLOPE * t + 16.0 / 116.0, KAPPA_SLOPE)
    }
}

/// LAB value and its Jacobian `∂(L,a,b)/∂(r,g,b)`.
fn lab_with_jacobian(rgb: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let w = white();
    let lin = rgb.map(linearize);
    let mut f = [0.0; 3];
    let mut df = [0.0; 3];
    // d f_i / d rgb_j
    let mut dfi = [[0.0; 3]; 3];
    for i in 0..3 {
        let t: f64 = (0..3).map(|j| SRGB_TO_XYZ[i][j] * lin[j].0).sum::<f64>() / w[i];
        (f[i], df[i]) = f_lab(t);
        for j in 0..3 {
            dfi[i][j] = df[i] * SRGB_TO_XYZ[i][j] / w[i] * lin[j].1;
        }
    }
    let lab = [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])];
    let jac = [
        std::array::from_fn(|j| 116.0 * dfi[1][j]),
        std::array::from_fn(|j| 500.0 * (dfi[0][j] - dfi[1][j])),
        std::array::from_fn(|j| 200.0 * (dfi[1][j] - dfi[2][j])),
    ];
    (lab, jac)
}

/// One sRGB triple in `[0,1]` to `(L, a, b)`.
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    lab_with_jacobian(rgb).0
}

fn planes(image: &Tensor) -> usize {
    image.len() / 3
}

/// `3×H×W` sRGB image to `3×H×W` LAB, without a tape.
pub fn rgb_to_lab_image(image: &Tensor) -> Tensor {
    let n = planes(image);
    let d = image.data();
    let mut out = vec![0.0; d.len()];
    for p in 0..n {
        let lab = rgb_to_lab_pixel([d[p], d[n + p], d[2 * n + p]]);
        for c in 0..3 {
            out[c * n + p] = lab[c];
        }
    }
    Tensor::new(image.shape(), out).unwrap()
}

struct LabOp;

impl Backward for LabOp {
    fn name(&self) -> &'static str {
        "rgb_to_lab"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let n = planes(x);
        let (d, g) = (x.data(), grad.data());
        let mut out = vec![0.0; d.len()];
        for p in 0..n {
            let (_, jac) = lab_with_jacobian([d[p], d[n + p], d[2 * n + p]]);
            for j in 0..3 {
                out[j * n + p] = (0..3).map(|o| g[o * n + p] * jac[o][j]).sum();
            }
        }
        vec![Some(Tensor::new(x.shape(), out).unwrap())]
    }
}

/// Tape version of [`rgb_to_lab_image`]; the leading axis must be 3.
pub fn rgb_to_lab(image: Var<'_>) -> Var<'_> {
    let x = image.value();
    image.tape().push_op(rgb_to_lab_image(&x), &[image], Box::new(LabOp))
}
