use super::EvalError;
use crate::diff::Tensor;
use crate::geometry::Mesh;

/// `|A∩B| / |A∪B|`, and 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Shape(vec![a.len()], vec![b.len()]));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::Shape(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn l1_metric(a: &Tensor, b: &Tensor) -> Result<f64, EvalError> {
    same_shape(a, b)?;
    if a.is_empty() {
        return Err(EvalError::Invalid("empty image".into()));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn luma(image: &Tensor) -> Result<(Vec<f64>, usize, usize), EvalError> {
    match *image.shape() {
        [3, h, w] => {
            let n = h * w;
            let d = image.data();
            Ok(((0..n).map(|p| 0.299 * d[p] + 0.587 * d[n + p] + 0.114 * d[2 * n + p]).collect(), h, w))
        }
        [h, w] => Ok((image.data().to_vec(), h, w)),
        _ => Err(EvalError::Invalid(format!("expected 3×H×W or H×W, got {:?}", image.shape()))),
    }
}

/// Structural similarity on luma with an 11×11 Gaussian window (σ = 1.5),
/// dynamic range 1, averaged over the window positions fully inside the
/// image.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64, EvalError> {
    same_shape(a, b)?;
    let (x, h, w) = luma(a)?;
    let (y, _, _) = luma(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(EvalError::Invalid(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels")));
    }
    let half = (SSIM_WINDOW / 2) as f64;
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / s).collect();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, gi) in g1.iter().enumerate() {
                for (j, gj) in g1.iter().enumerate() {
                    let wgt = gi * gj;
                    let p = (r + i) * w + c + j;
                    mx += wgt * x[p];
                    my += wgt * y[p];
                    sxx += wgt * x[p] * x[p];
                    syy += wgt * y[p] * y[p];
                    sxy += wgt * x[p] * y[p];
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Occupancy of voxel centers on a `resolution³` grid spanning `[lo, hi]`,
/// by the parity of crossings along a ray in `+x`. Indexed `[z][y][x]`.
pub fn voxelize(mesh: &Mesh, lo: [f64; 3], hi: [f64; 3], resolution: usize) -> Result<Vec<bool>, EvalError> {
    if !mesh.is_watertight() {
        return Err(EvalError::NotWatertight);
    }
    if resolution == 0 {
        return Err(EvalError::Invalid("voxel resolution must be positive".into()));
    }
    let n = resolution;
    let step: [f64; 3] = std::array::from_fn(|k| (hi[k] - lo[k]) / n as f64);
    let center = |k: usize, i: usize| lo[k] + (i as f64 + 0.5) * step[k];
    // Off-grid nudge so rays never pass exactly through an edge or vertex.
    let (dy, dz) = (step[1] * 1.234_567e-6, step[2] * 2.345_678e-6);
    let mut occ = vec![false; n * n * n];
    let mut crossings = Vec::new();
    for iz in 0..n {
        let z = center(2, iz) + dz;
        for iy in 0..n {
            let y = center(1, iy) + dy;
            crossings.clear();
            for f in &mesh.faces {
                let [a, b, c] = f.map(|i| mesh.vertices[i]);
                // Barycentrics of (y, z) in the triangle projected to yz.
                let det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
                if det == 0.0 {
                    continue;
                }
                let u = ((y - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (z - a[2])) / det;
                let v = ((b[1] - a[1]) * (z - a[2]) - (y - a[1]) * (b[2] - a[2])) / det;
                if u < 0.0 || v < 0.0 || u + v > 1.0 {
                    continue;
                }
                crossings.push(a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]));
            }
            crossings.sort_by(f64::total_cmp);
            for ix in 0..n {
                let x = center(0, ix);
                let behind = crossings.iter().filter(|&&cx| cx > x).count();
                occ[(iz * n + iy) * n + ix] = behind % 2 == 1;
            }
        }
    }
    Ok(occ)
}

fn bounds(meshes: &[&Mesh]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for m in meshes {
        for v in &m.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
    }
    (lo, hi)
}

/// IoU of the two occupancy grids over the union bounding box. The meshes
/// are used as given; callers align and normalize them.
pub fn voxel_3d_iou(a: &Mesh, b: &Mesh, resolution: usize) -> Result<f64, EvalError> {
    let (lo, hi) = bounds(&[a, b]);
    let va = voxelize(a, lo, hi, resolution)?;
    let vb = voxelize(b, lo, hi, resolution)?;
    mask_iou(&va, &vb)
}
