//! Fragment generation, soft aggregation and the matching backward passes.
//!
//! A fragment is one (pixel, face) pair that survives bounding-box
//! truncation. Fragments are grouped per pixel in face order, so forward and
//! backward sums run in a fixed order.

use super::texture::{sample, sample_uv_grad, scatter_sample};
use super::RenderConfig;
use crate::diff::{sigmoid_f64, Tensor};

/// Logits below this underflow `sigmoid` to zero; such fragments are dropped.
const LOGIT_FLOOR: f64 = -700.0;
const DEPTH_GUARD: f64 = 1e-8;
const DEGENERATE_AREA: f64 = 1e-18;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Frag {
    pub face: usize,
    /// `δ·d²/σ`.
    pub logit: f64,
    /// Derivative of `logit` with respect to the face's projected corners.
    pub dlogit: [f64; 6],
    /// Clamped, renormalized barycentrics.
    pub bary: [f64; 3],
    /// Unclamped barycentrics; `None` for a degenerate projection.
    pub raw: Option<[f64; 3]>,
}

pub(crate) struct ColorData {
    pub zmin: usize,
    pub zmax: usize,
    pub range: f64,
    pub zbar: Vec<f64>,
    pub weight: Vec<f64>,
    pub uv: Vec<[f64; 2]>,
    pub rgb_frag: Vec<[f64; 3]>,
    pub w_bg: Vec<f64>,
    pub rgb: Vec<f64>,
}

pub(crate) struct Raster {
    pub size: usize,
    pub offsets: Vec<usize>,
    pub frags: Vec<Frag>,
    pub mask: Vec<f64>,
    pub color: Option<ColorData>,
}

pub(crate) struct ColorInputs<'a> {
    pub depth: &'a [f64],
    pub uv_coords: &'a [[f64; 2]],
    pub uv_faces: &'a [[usize; 3]],
    pub texture: &'a Tensor,
}

pub(crate) fn pixel_center(size: usize, r: usize, c: usize) -> [f64; 2] {
    let s = size as f64;
    [
        -1.0 + (2 * c + 1) as f64 / s,
        1.0 - (2 * r + 1) as f64 / s,
    ]
}

fn cross(u: [f64; 2], w: [f64; 2]) -> f64 {
    u[0] * w[1] - u[1] * w[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Barycentrics from signed sub-areas; `None` when the triangle has no area.
pub(crate) fn raw_barycentric(p: [f64; 2], tri: &[[f64; 2]; 3]) -> Option<[f64; 3]> {
    let area = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
    if area.abs() <= DEGENERATE_AREA {
        return None;
    }
    let n = |i: usize| cross(sub(tri[(i + 1) % 3], p), sub(tri[(i + 2) % 3], p)) / area;
    Some([n(0), n(1), n(2)])
}

fn clamp_barycentric(raw: Option<[f64; 3]>) -> [f64; 3] {
    match raw {
        None => [1.0 / 3.0; 3],
        Some(b) => {
            let c = b.map(|v| v.max(0.0));
            let s: f64 = c.iter().sum();
            c.map(|v| v / s)
        }
    }
}

/// Pulls a gradient on the clamped barycentrics back to the corners.
fn barycentric_backward(p: [f64; 2], tri: &[[f64; 2]; 3], raw: [f64; 3], g: [f64; 3]) -> [f64; 6] {
    let clamped = raw.map(|v| v.max(0.0));
    let s: f64 = clamped.iter().sum();
    let dot: f64 = (0..3).map(|i| g[i] * clamped[i] / s).sum();
    let g_raw: [f64; 3] = std::array::from_fn(|i| if raw[i] > 0.0 { (g[i] - dot) / s } else { 0.0 });

    // raw_i = N_i / A with A = ΣN_i, so dL/dN_i = (g_i − Σ g_k raw_k) / A.
    let area = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
    let dot_raw: f64 = (0..3).map(|i| g_raw[i] * raw[i]).sum();
    let mut out = [0.0; 6];
    for i in 0..3 {
        let gn = (g_raw[i] - dot_raw) / area;
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let u = sub(tri[j], p);
        let w = sub(tri[k], p);
        out[2 * j] += gn * w[1];
        out[2 * j + 1] -= gn * w[0];
        out[2 * k] -= gn * u[1];
        out[2 * k + 1] += gn * u[0];
    }
    out
}

/// Logit `δ·d²/σ` of one face at one pixel and its derivative with respect
/// to the six corner coordinates.
pub(crate) fn face_logit(p: [f64; 2], tri: &[[f64; 2]; 3], sigma: f64) -> (f64, [f64; 6], Option<[f64; 3]>) {
    let mut best = (f64::INFINITY, 0usize, 0.0, [0.0; 2]);
    for e in 0..3 {
        let a = tri[e];
        let b = tri[(e + 1) % 3];
        let ab = sub(b, a);
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let c = [a[0] + t * ab[0], a[1] + t * ab[1]];
        let diff = sub(p, c);
        let d2 = diff[0] * diff[0] + diff[1] * diff[1];
        if d2 < best.0 {
            best = (d2, e, t, diff);
        }
    }
    let (d2, e, t, diff) = best;
    let raw = raw_barycentric(p, tri);
    let inside = raw.is_some_and(|b| b.iter().all(|&v| v >= 0.0));
    let sign = if inside { 1.0 } else { -1.0 };
    let scale = sign / sigma;
    let mut grad = [0.0; 6];
    let f = (e + 1) % 3;
    for c in 0..2 {
        grad[2 * e + c] = -2.0 * diff[c] * (1.0 - t) * scale;
        grad[2 * f + c] = -2.0 * diff[c] * t * scale;
    }
    (d2 * scale, grad, raw)
}

fn corners(xy: &[f64], face: &[usize; 3]) -> [[f64; 2]; 3] {
    face.map(|v| [xy[2 * v], xy[2 * v + 1]])
}

pub(crate) fn rasterize(
    xy: &[f64],
    faces: &[[usize; 3]],
    config: &RenderConfig,
    color: Option<ColorInputs<'_>>,
) -> Raster {
    let size = config.image_size;
    let npix = size * size;
    let s = size as f64;
    let pad = 3.0 * config.sigma.sqrt();

    let mut buckets: Vec<Vec<Frag>> = vec![Vec::new(); npix];
    for (fi, face) in faces.iter().enumerate() {
        let tri = corners(xy, face);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &tri {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            continue;
        }
        // Pixel (r, c) has center x = −1 + (2c+1)/s, y = 1 − (2r+1)/s.
        let c_lo = (((x0 - pad + 1.0) * s - 1.0) / 2.0).ceil().max(0.0);
        let c_hi = (((x1 + pad + 1.0) * s - 1.0) / 2.0).floor().min(s - 1.0);
        let r_lo = (((1.0 - y1 - pad) * s - 1.0) / 2.0).ceil().max(0.0);
        let r_hi = (((1.0 - y0 + pad) * s - 1.0) / 2.0).floor().min(s - 1.0);
        if c_lo > c_hi || r_lo > r_hi {
            continue;
        }
        for r in r_lo as usize..=r_hi as usize {
            for c in c_lo as usize..=c_hi as usize {
                let p = pixel_center(size, r, c);
                let (logit, dlogit, raw) = face_logit(p, &tri, config.sigma);
                if logit < LOGIT_FLOOR {
                    continue;
                }
                buckets[r * size + c].push(Frag {
                    face: fi,
                    logit,
                    dlogit,
                    bary: clamp_barycentric(raw),
                    raw,
                });
            }
        }
    }

    let mut offsets = Vec::with_capacity(npix + 1);
    offsets.push(0);
    let mut frags = Vec::with_capacity(buckets.iter().map(Vec::len).sum());
    for b in buckets {
        frags.extend(b);
        offsets.push(frags.len());
    }

    let mask = (0..npix)
        .map(|p| {
            let keep: f64 = frags[offsets[p]..offsets[p + 1]]
                .iter()
                .map(|f| sigmoid_f64(-f.logit))
                .product();
            1.0 - keep
        })
        .collect();

    let color = color.map(|inputs| shade(&frags, &offsets, faces, config, &inputs));
    Raster {
        size,
        offsets,
        frags,
        mask,
        color,
    }
}

fn shade(
    frags: &[Frag],
    offsets: &[usize],
    faces: &[[usize; 3]],
    config: &RenderConfig,
    inputs: &ColorInputs<'_>,
) -> ColorData {
    let npix = offsets.len() - 1;
    let depth = inputs.depth;
    let mut zmin = 0;
    let mut zmax = 0;
    for (i, &z) in depth.iter().enumerate() {
        if z < depth[zmin] {
            zmin = i;
        }
        if z > depth[zmax] {
            zmax = i;
        }
    }
    let (lo, hi) = if depth.is_empty() { (0.0, 0.0) } else { (depth[zmin], depth[zmax]) };
    let range = hi - lo + DEPTH_GUARD;

    let mut zbar = Vec::with_capacity(frags.len());
    let mut uv = Vec::with_capacity(frags.len());
    let mut rgb_frag = Vec::with_capacity(frags.len());
    for f in frags {
        let face = faces[f.face];
        let z: f64 = (0..3).map(|i| f.bary[i] * depth[face[i]]).sum();
        zbar.push((z - lo + DEPTH_GUARD) / range);
        let corners = inputs.uv_faces[f.face];
        let mut t = [0.0; 2];
        for i in 0..3 {
            let c = inputs.uv_coords[corners[i]];
            t[0] += f.bary[i] * c[0];
            t[1] += f.bary[i] * c[1];
        }
        uv.push(t);
        rgb_frag.push(sample(inputs.texture, t));
    }

    let bg_logit = config.eps_bg / config.gamma;
    let mut weight = vec![0.0; frags.len()];
    let mut w_bg = vec![0.0; npix];
    let mut rgb = vec![0.0; 3 * npix];
    for p in 0..npix {
        let range_p = offsets[p]..offsets[p + 1];
        let scores: Vec<f64> = range_p
            .clone()
            .map(|j| log_sigmoid(frags[j].logit) + zbar[j] / config.gamma)
            .collect();
        let top = scores.iter().copied().fold(bg_logit, f64::max);
        let e_bg = (bg_logit - top).exp();
        let total: f64 = scores.iter().map(|l| (l - top).exp()).sum::<f64>() + e_bg;
        let mut px = [0.0; 3];
        for (j, l) in range_p.zip(&scores) {
            let w = (l - top).exp() / total;
            weight[j] = w;
            for c in 0..3 {
                px[c] += w * rgb_frag[j][c];
            }
        }
        w_bg[p] = e_bg / total;
        for c in 0..3 {
            rgb[c * npix + p] = px[c] + w_bg[p] * config.background[c];
        }
    }

    ColorData {
        zmin,
        zmax,
        range,
        zbar,
        weight,
        uv,
        rgb_frag,
        w_bg,
        rgb,
    }
}

/// Gradients of a rasterization with respect to projected vertices, depths
/// and texels, given upstream gradients on the mask and (optionally) the RGB
/// planes.
pub(crate) struct RasterGrads {
    pub xy: Vec<f64>,
    pub depth: Vec<f64>,
    pub texture: Vec<f64>,
}

pub(crate) fn backward(
    raster: &Raster,
    xy: &[f64],
    faces: &[[usize; 3]],
    config: &RenderConfig,
    color: Option<&ColorInputs<'_>>,
    g_mask: &[f64],
    g_rgb: Option<&[f64]>,
) -> RasterGrads {
    let npix = raster.size * raster.size;
    let mut g_xy = vec![0.0; xy.len()];
    let mut g_depth = vec![0.0; color.map_or(0, |c| c.depth.len())];
    let mut g_tex = vec![0.0; color.map_or(0, |c| c.texture.len())];
    let mut g_logit = vec![0.0; raster.frags.len()];
    let mut suffix = Vec::new();

    for p in 0..npix {
        let (start, end) = (raster.offsets[p], raster.offsets[p + 1]);
        let gm = g_mask[p];
        if gm != 0.0 && end > start {
            // ∂m/∂x_j = (Π_{k≠j} q_k) · q_j · D_j with q = 1 − D.
            suffix.clear();
            suffix.resize(end - start + 1, 1.0);
            for j in (start..end).rev() {
                suffix[j - start] = suffix[j - start + 1] * sigmoid_f64(-raster.frags[j].logit);
            }
            let mut prefix = 1.0;
            for j in start..end {
                let x = raster.frags[j].logit;
                let q = sigmoid_f64(-x);
                let d = sigmoid_f64(x);
                g_logit[j] += gm * prefix * suffix[j - start + 1] * q * d;
                prefix *= q;
            }
        }
    }

    if let (Some(cd), Some(inputs), Some(g_rgb)) = (&raster.color, color, g_rgb) {
        let (ht, wt) = (inputs.texture.shape()[1], inputs.texture.shape()[2]);
        let mut g_zbar = vec![0.0; raster.frags.len()];
        for p in 0..npix {
            let (start, end) = (raster.offsets[p], raster.offsets[p + 1]);
            let g = [g_rgb[p], g_rgb[npix + p], g_rgb[2 * npix + p]];
            if g == [0.0; 3] {
                continue;
            }
            let g_bg: f64 = (0..3).map(|c| g[c] * config.background[c]).sum();
            let big_g: Vec<f64> = (start..end)
                .map(|j| (0..3).map(|c| g[c] * cd.rgb_frag[j][c]).sum())
                .collect();
            let mean: f64 = (start..end).map(|j| cd.weight[j] * big_g[j - start]).sum::<f64>()
                + cd.w_bg[p] * g_bg;
            for j in start..end {
                let w = cd.weight[j];
                let g_score = w * (big_g[j - start] - mean);
                g_logit[j] += g_score * sigmoid_f64(-raster.frags[j].logit);
                g_zbar[j] += g_score / config.gamma;
                let gc = g.map(|v| v * w);
                scatter_sample(&mut g_tex, ht, wt, cd.uv[j], gc);

                if config.attach_barycentric {
                    let f = &raster.frags[j];
                    if let Some(raw) = f.raw {
                        let face = faces[f.face];
                        let g_uv = sample_uv_grad(inputs.texture, cd.uv[j], gc);
                        let corners_uv = inputs.uv_faces[f.face];
                        let g_z = g_zbar[j] / cd.range;
                        let g_b: [f64; 3] = std::array::from_fn(|i| {
                            let c = inputs.uv_coords[corners_uv[i]];
                            g_uv[0] * c[0] + g_uv[1] * c[1] + g_z * inputs.depth[face[i]]
                        });
                        let tri = corners(xy, &face);
                        let p_ndc = pixel_center(raster.size, p / raster.size, p % raster.size);
                        let gb = barycentric_backward(p_ndc, &tri, raw, g_b);
                        for i in 0..3 {
                            g_xy[2 * face[i]] += gb[2 * i];
                            g_xy[2 * face[i] + 1] += gb[2 * i + 1];
                        }
                    }
                }
            }
        }

        // z̄ = (z − z_min + g) / (z_max − z_min + g) with z = Σ b_i z_i, so a
        // scene with no depth extent normalizes to 1 instead of 0.
        let r = cd.range;
        for (j, f) in raster.frags.iter().enumerate() {
            let gz = g_zbar[j];
            if gz == 0.0 {
                continue;
            }
            let face = faces[f.face];
            let num = cd.zbar[j] * r;
            for i in 0..3 {
                g_depth[face[i]] += gz * f.bary[i] / r;
            }
            g_depth[cd.zmin] += gz * (num - r) / (r * r);
            g_depth[cd.zmax] -= gz * num / (r * r);
        }
    }

    for (f, &gl) in raster.frags.iter().zip(&g_logit) {
        if gl == 0.0 {
            continue;
        }
        let face = faces[f.face];
        for i in 0..3 {
            g_xy[2 * face[i]] += gl * f.dlogit[2 * i];
            g_xy[2 * face[i] + 1] += gl * f.dlogit[2 * i + 1];
        }
    }

    RasterGrads {
        xy: g_xy,
        depth: g_depth,
        texture: g_tex,
    }
}
