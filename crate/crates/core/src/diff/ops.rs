//! Primitive operations on [`Var`]. Shapes never broadcast implicitly; the
//! few row-broadcasting helpers (`add_row`, `repeat_rows`, `scale_by`) say so
//! in their names.

use rand::Rng;

use super::tape::{Backward, Var};
use super::tensor::gemm;
use super::{DiffError, Tensor};

type BackwardFn = dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>>;

struct FnOp {
    name: &'static str,
    f: Box<BackwardFn>,
}

impl Backward for FnOp {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        (self.f)(inputs, output, grad)
    }
}

fn op<F>(name: &'static str, f: F) -> Box<dyn Backward>
where
    F: Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>> + 'static,
{
    Box::new(FnOp {
        name,
        f: Box::new(f),
    })
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> DiffError {
    DiffError::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        Err(shape_err(op, a, b))
    } else {
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    sigmoid(x)
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    fn unary(
        &self,
        name: &'static str,
        forward: impl Fn(f64) -> f64,
        // derivative from (input, output)
        deriv: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = x.map(forward);
        self.tape.push_op(
            y,
            &[*self],
            op(name, move |inp, out, g| {
                let data = inp[0]
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&x, &y), &g)| g * deriv(x, y))
                    .collect();
                vec![Some(Tensor::new(inp[0].shape(), data).unwrap())]
            }),
        )
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        Ok(self.tape.push_op(
            a.zip_map(&b, |x, y| x + y),
            &[*self, other],
            op("add", |_, _, g| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        Ok(self.tape.push_op(
            a.zip_map(&b, |x, y| x - y),
            &[*self, other],
            op("sub", |_, _, g| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        ))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        Ok(self.tape.push_op(
            a.zip_map(&b, |x, y| x * y),
            &[*self, other],
            op("mul", |inp, _, g| {
                vec![
                    Some(g.zip_map(inp[1], |g, b| g * b)),
                    Some(g.zip_map(inp[0], |g, a| g * a)),
                ]
            }),
        ))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (a, b) = (self.value(), other.value());
        same_shape("div", &a, &b)?;
        Ok(self.tape.push_op(
            a.zip_map(&b, |x, y| x / y),
            &[*self, other],
            op("div", |inp, out, g| {
                let ga = g.zip_map(inp[1], |g, b| g / b);
                let mut gb = g.zip_map(out, |g, y| -g * y);
                for (v, b) in gb.data_mut().iter_mut().zip(inp[1].data()) {
                    *v /= b;
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&self, factor: f64) -> Var<'t> {
        self.unary("scale", move |x| x * factor, move |_, _| factor)
    }

    pub fn add_scalar(&self, offset: f64) -> Var<'t> {
        self.unary("add_scalar", move |x| x + offset, |_, _| 1.0)
    }

    /// Multiplies every element by a single-element variable.
    pub fn scale_by(&self, factor: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (x, s) = (self.value(), factor.value());
        if s.len() != 1 {
            return Err(shape_err("scale_by", &x, &s));
        }
        let sv = s.item();
        Ok(self.tape.push_op(
            x.map(|v| v * sv),
            &[*self, factor],
            op("scale_by", |inp, _, g| {
                let sv = inp[1].item();
                let gs: f64 = g.data().iter().zip(inp[0].data()).map(|(g, x)| g * x).sum();
                vec![
                    Some(g.map(|v| v * sv)),
                    Some(Tensor::new(inp[1].shape(), vec![gs]).unwrap()),
                ]
            }),
        ))
    }

    /// `x[i, :] + bias` for `x: k×n`, `bias: n`.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (x, b) = (self.value(), bias.value());
        let n = b.len();
        if x.ndim() != 2 || x.shape()[1] != n {
            return Err(shape_err("add_row", &x, &b));
        }
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(self.tape.push_op(
            y,
            &[*self, bias],
            op("add_row", |inp, _, g| {
                let n = inp[1].len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(Tensor::new(inp[1].shape(), gb).unwrap()),
                ]
            }),
        ))
    }

    /// Stacks `k` copies of a vector (or 1×n row) into a `k×n` matrix.
    pub fn repeat_rows(&self, k: usize) -> Var<'t> {
        let x = self.value();
        let n = x.len();
        let mut data = Vec::with_capacity(k * n);
        for _ in 0..k {
            data.extend_from_slice(x.data());
        }
        self.tape.push_op(
            Tensor::new(&[k, n], data).unwrap(),
            &[*self],
            op("repeat_rows", |inp, _, g| {
                let n = inp[0].len();
                let mut acc = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                vec![Some(Tensor::new(inp[0].shape(), acc).unwrap())]
            }),
        )
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, DiffError> {
        let (a, b) = (self.value(), other.value());
        let (Some((m, k)), Some((k2, n))) = (a.dims2(), b.dims2()) else {
            return Err(shape_err("matmul", &a, &b));
        };
        if k != k2 {
            return Err(shape_err("matmul", &a, &b));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut c, 0.0);
        Ok(self.tape.push_op(
            Tensor::new(&[m, n], c).unwrap(),
            &[*self, other],
            op("matmul", |inp, _, g| {
                let (m, k) = inp[0].dims2().unwrap();
                let n = inp[1].shape()[1];
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, inp[1].data(), true, &mut ga, 0.0);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, inp[0].data(), true, g.data(), false, &mut gb, 0.0);
                vec![
                    Some(Tensor::new(&[m, k], ga).unwrap()),
                    Some(Tensor::new(&[k, n], gb).unwrap()),
                ]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        let Some((r, c)) = x.dims2() else {
            return Err(DiffError::Rank {
                op: "transpose",
                expected: 2,
                shape: x.shape().to_vec(),
            });
        };
        Ok(self.tape.push_op(
            transpose2(&x, r, c),
            &[*self],
            op("transpose", |inp, _, g| {
                let (r, c) = inp[0].dims2().unwrap();
                vec![Some(transpose2(g, c, r))]
            }),
        ))
    }

    pub fn sum(&self) -> Var<'t> {
        let x = self.value();
        self.tape.push_op(
            Tensor::scalar(x.sum()),
            &[*self],
            op("sum", |inp, _, g| {
                vec![Some(Tensor::full(inp[0].shape(), g.item()))]
            }),
        )
    }

    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let n = x.len().max(1) as f64;
        self.tape.push_op(
            Tensor::scalar(x.sum() / n),
            &[*self],
            op("mean", move |inp, _, g| {
                vec![Some(Tensor::full(inp[0].shape(), g.item() / n))]
            }),
        )
    }

    /// Sum along one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(DiffError::Axis {
                op: "sum_axis",
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[base + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        Ok(self.tape.push_op(
            Tensor::new(&shape, out).unwrap(),
            &[*self],
            op("sum_axis", move |inp, _, g| {
                let mut gx = vec![0.0; inp[0].len()];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        gx[base..base + inner]
                            .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
            }),
        ))
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary("pow", move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Var<'t> {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&self) -> Var<'t> {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, alpha: f64) -> Var<'t> {
        self.unary(
            "leaky_relu",
            move |x| if x > 0.0 { x } else { alpha * x },
            move |x, _| if x > 0.0 { 1.0 } else { alpha },
        )
    }

    /// Gradient is zero where the input was clamped.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(DiffError::Axis {
                op: "softmax",
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x.data()[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..len {
                    let e = (x.data()[idx(a)] - max).exp();
                    y[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    y[idx(a)] /= z;
                }
            }
        }
        Ok(self.tape.push_op(
            Tensor::new(x.shape(), y).unwrap(),
            &[*self],
            op("softmax", move |inp, out, g| {
                let mut gx = vec![0.0; inp[0].len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g.data()[idx(a)] * out.data()[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = out.data()[idx(a)] * (g.data()[idx(a)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != x.len() {
            return Err(DiffError::Shape {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.tape.push_op(
            x.reshaped(shape)?,
            &[*self],
            op("reshape", |inp, _, g| vec![Some(g.reshaped(inp[0].shape()).unwrap())]),
        ))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        if axis >= x.ndim() || start + len > x.shape()[axis] {
            return Err(DiffError::Axis {
                op: "slice",
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, full, inner) = axis_extents(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(self.tape.push_op(
            Tensor::new(&shape, out).unwrap(),
            &[*self],
            op("slice", move |inp, _, g| {
                let mut gx = vec![0.0; inp[0].len()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
            }),
        ))
    }

    /// Selects rows (entries along axis 0); indices may repeat.
    pub fn gather(&self, indices: &[usize]) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        if x.ndim() == 0 {
            return Err(DiffError::Rank {
                op: "gather",
                expected: 1,
                shape: vec![],
            });
        }
        let rows = x.shape()[0];
        let inner = x.len() / rows.max(1);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(DiffError::Index {
                op: "gather",
                index: bad,
                len: rows,
            });
        }
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&x.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(self.tape.push_op(
            Tensor::new(&shape, out).unwrap(),
            &[*self],
            op("gather", move |inp, _, g| {
                let mut gx = vec![0.0; inp[0].len()];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..inner {
                        gx[i * inner + c] += g.data()[r * inner + c];
                    }
                }
                vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
            }),
        ))
    }

    /// Euclidean norm of every row of a `k×n` matrix, giving `k` values. The
    /// gradient of a zero row is taken as zero.
    pub fn row_norms(&self) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        let Some((k, n)) = x.dims2() else {
            return Err(DiffError::Rank {
                op: "row_norms",
                expected: 2,
                shape: x.shape().to_vec(),
            });
        };
        let norms: Vec<f64> = x
            .data()
            .chunks(n.max(1))
            .take(k)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.tape.push_op(
            Tensor::vector(norms),
            &[*self],
            op("row_norms", move |inp, out, g| {
                let mut gx = vec![0.0; inp[0].len()];
                for r in 0..k {
                    let nrm = out.data()[r];
                    if nrm > 0.0 {
                        let s = g.data()[r] / nrm;
                        for c in 0..n {
                            gx[r * n + c] = s * inp[0].data()[r * n + c];
                        }
                    }
                }
                vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
            }),
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t>, DiffError> {
        let x = self.value();
        let n = *x.shape().last().ok_or(DiffError::Rank {
            op: "layer_norm",
            expected: 1,
            shape: vec![],
        })?;
        let mut y = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / n.max(1));
        for (xr, yr) in x.data().chunks(n).zip(y.chunks_mut(n)) {
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (yv, xv) in yr.iter_mut().zip(xr) {
                *yv = (xv - mean) * is;
            }
            inv_std.push(is);
        }
        Ok(self.tape.push_op(
            Tensor::new(x.shape(), y).unwrap(),
            &[*self],
            op("layer_norm", move |inp, out, g| {
                let mut gx = vec![0.0; inp[0].len()];
                let nf = n as f64;
                for (r, ((yr, gr), gxr)) in out
                    .data()
                    .chunks(n)
                    .zip(g.data().chunks(n))
                    .zip(gx.chunks_mut(n))
                    .enumerate()
                {
                    let gm = gr.iter().sum::<f64>() / nf;
                    let gy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / nf;
                    for ((o, &gv), &yv) in gxr.iter_mut().zip(gr).zip(yr) {
                        *o = inv_std[r] * (gv - gm - yv * gy);
                    }
                }
                vec![Some(Tensor::new(inp[0].shape(), gx).unwrap())]
            }),
        ))
    }

    /// Inverted dropout: at train time each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`; at
    /// eval time this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, train: bool, rng: &mut R) -> Var<'t> {
        if !train || rate <= 0.0 {
            return *self;
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let y = Tensor::new(
            x.shape(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )
        .unwrap();
        self.tape.push_op(
            y,
            &[*self],
            op("dropout", move |inp, _, g| {
                let data = g.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                vec![Some(Tensor::new(inp[0].shape(), data).unwrap())]
            }),
        )
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, DiffError> {
    let Some(first) = parts.first() else {
        return Err(DiffError::Empty { op: "concat" });
    };
    let tape = first.tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(DiffError::Axis {
            op: "concat",
            axis,
            shape: base,
        });
    }
    for v in &values[1..] {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(shape_err("concat", &values[0], v));
        }
    }
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = axis_extents(&base, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&lens) {
            out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    Ok(tape.push_op(
        Tensor::new(&shape, out).unwrap(),
        parts,
        op("concat", move |inp, _, g| {
            let mut grads: Vec<Vec<f64>> = inp.iter().map(|t| Vec::with_capacity(t.len())).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gv, &len) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&g.data()[offset..offset + len * inner]);
                    offset += len * inner;
                }
            }
            grads
                .into_iter()
                .zip(inp)
                .map(|(gv, t)| Some(Tensor::new(t.shape(), gv).unwrap()))
                .collect()
        }),
    ))
}

fn transpose2(x: &Tensor, r: usize, c: usize) -> Tensor {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.data()[i * c + j];
        }
    }
    Tensor::new(&[c, r], out).unwrap()
}
