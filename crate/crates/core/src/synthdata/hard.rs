//! Hard z-buffer rasterizer used for ground truth. Deliberately shares no
//! code with the soft renderer: pixel centers, edge tests and depth are
//! recomputed here.

use crate::geometry::{project_weak_perspective, Mesh, Pose};

/// Per-pixel id of the visible face, row-major, `None` for background.
#[derive(Clone, Debug, PartialEq)]
pub struct HardRender {
    pub size: usize,
    pub face: Vec<Option<usize>>,
}

impl HardRender {
    pub fn mask(&self) -> Vec<bool> {
        self.face.iter().map(Option::is_some).collect()
    }

    pub fn coverage(&self) -> f64 {
        self.face.iter().filter(|f| f.is_some()).count() as f64 / self.face.len() as f64
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Point-in-triangle at every pixel center (either winding, edges
/// inclusive), keeping the nearest face (largest depth).
pub fn rasterize_hard(mesh: &Mesh, pose: &Pose, size: usize) -> HardRender {
    let (xy, depth) = project_weak_perspective(&mesh.vertices, pose);
    let mut zbuf = vec![f64::NEG_INFINITY; size * size];
    let mut face = vec![None; size * size];
    let s = size as f64;
    // NDC → continuous pixel coordinates: column = (x + 1)·S/2 − 0.5.
    let to_col = |x: f64| (x + 1.0) * s / 2.0 - 0.5;
    let to_row = |y: f64| (1.0 - y) * s / 2.0 - 0.5;
    for (f, tri) in mesh.faces.iter().enumerate() {
        let p = tri.map(|i| xy[i]);
        let area = edge(p[0], p[1], p[2]);
        if area == 0.0 {
            continue;
        }
        let xs = p.map(|q| q[0]);
        let ys = p.map(|q| q[1]);
        let lo = |v: f64| v.floor().max(0.0) as usize;
        let hi = |v: f64| (v.ceil().max(0.0) as usize).min(size - 1);
        let c0 = lo(to_col(xs.iter().copied().fold(f64::INFINITY, f64::min)));
        let c1 = hi(to_col(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
        let r0 = lo(to_row(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
        let r1 = hi(to_row(ys.iter().copied().fold(f64::INFINITY, f64::min)));
        if c0 > c1 || r0 > r1 {
            continue;
        }
        for r in r0..=r1 {
            let y = 1.0 - (2 * r + 1) as f64 / s;
            for c in c0..=c1 {
                let x = (2 * c + 1) as f64 / s - 1.0;
                let q = [x, y];
                let w = [edge(p[1], p[2], q), edge(p[2], p[0], q), edge(p[0], p[1], q)].map(|e| e / area);
                if w.iter().any(|&b| b < 0.0) {
                    continue;
                }
                let z = w[0] * depth[tri[0]] + w[1] * depth[tri[1]] + w[2] * depth[tri[2]];
                let k = r * size + c;
                if z > zbuf[k] {
                    zbuf[k] = z;
                    face[k] = Some(f);
                }
            }
        }
    }
    HardRender { size, face }
}
