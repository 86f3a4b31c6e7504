//! Bilinear texture lookup. `u` wraps around (the sphere chart is periodic in
//! longitude), `v` clamps at the poles. Texel `(0, 0)` is the top-left corner,
//! which corresponds to `v = 1`.

use crate::diff::Tensor;

struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    ax: f64,
    ay: f64,
}

fn taps(ht: usize, wt: usize, uv: [f64; 2]) -> Taps {
    let fx = uv[0] * wt as f64 - 0.5;
    let fy = (1.0 - uv[1]) * ht as f64 - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let wrap = |x: f64| (x as i64).rem_euclid(wt as i64) as usize;
    let clamp = |y: f64| (y.max(0.0) as usize).min(ht - 1);
    let (xa, xb) = (wrap(x0), wrap(x0 + 1.0));
    let (ya, yb) = (clamp(y0), clamp(y0 + 1.0));
    Taps {
        idx: [ya * wt + xa, ya * wt + xb, yb * wt + xa, yb * wt + xb],
        w: [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay],
        ax,
        ay,
    }
}

fn dims(texture: &Tensor) -> (usize, usize) {
    (texture.shape()[1], texture.shape()[2])
}

/// RGB at `uv` of a `3×H_t×W_t` texture.
pub fn sample(texture: &Tensor, uv: [f64; 2]) -> [f64; 3] {
    let (ht, wt) = dims(texture);
    let plane = ht * wt;
    let t = taps(ht, wt, uv);
    let d = texture.data();
    std::array::from_fn(|c| (0..4).map(|k| t.w[k] * d[c * plane + t.idx[k]]).sum())
}

/// Adds `g` (a gradient on the sampled RGB) into the texel gradient buffer.
pub(crate) fn scatter_sample(g_tex: &mut [f64], ht: usize, wt: usize, uv: [f64; 2], g: [f64; 3]) {
    let plane = ht * wt;
    let t = taps(ht, wt, uv);
    for c in 0..3 {
        for k in 0..4 {
            g_tex[c * plane + t.idx[k]] += g[c] * t.w[k];
        }
    }
}

/// Gradient of `Σ_c g_c · sample(uv)_c` with respect to `uv`.
pub(crate) fn sample_uv_grad(texture: &Tensor, uv: [f64; 2], g: [f64; 3]) -> [f64; 2] {
    let (ht, wt) = dims(texture);
    let plane = ht * wt;
    let t = taps(ht, wt, uv);
    let d = texture.data();
    let mut out = [0.0; 2];
    for c in 0..3 {
        let v = |k: usize| d[c * plane + t.idx[k]];
        let dfx = (1.0 - t.ay) * (v(1) - v(0)) + t.ay * (v(3) - v(2));
        let dfy = (1.0 - t.ax) * (v(2) - v(0)) + t.ax * (v(3) - v(1));
        out[0] += g[c] * dfx * wt as f64;
        out[1] -= g[c] * dfy * ht as f64;
    }
    out
}
