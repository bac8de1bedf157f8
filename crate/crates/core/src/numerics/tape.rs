//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward evaluation. Parameters
//! enter the tape by value through [`Tape::param`]; [`Tape::backward`] then
//! walks the tape in reverse and adds `d loss / d param` into each
//! parameter's `grad`. Gradients accumulate across calls until
//! [`ParamSet::zero_grads`] is invoked.
//!
//! All operations use the matrix view of their inputs (see [`Tensor::rows`]),
//! so a rank-1 tensor behaves like a single row.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{self, matmul_at_into, matmul_bt_into, matmul_into};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::math;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    DotRows(Var, Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording context for one differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a parameter.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, k, k2, c) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return Err(Error::shape(alloc::format!("matmul {r}x{k} by {k2}x{c}")));
        }
        let mut out = vec![0.0; r * c];
        matmul_into(av.data(), bv.data(), &mut out, r, k, c);
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, k, c, k2) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return Err(Error::shape(alloc::format!("matmul {r}x{k} by ({c}x{k2})^T")));
        }
        let mut out = vec![0.0; r * c];
        matmul_bt_into(av.data(), bv.data(), &mut out, r, k, c);
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::MatMulBt(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        // A vector and a single-row matrix of the same width are compatible.
        if (va.rows(), va.cols(), sa.is_empty()) != (vb.rows(), vb.cols(), sb.is_empty()) {
            return Err(Error::shape(alloc::format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        Ok(self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        Ok(self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::Sub(a, b)))
    }

    /// Adds the vector `v` to every row of `a` (bias and embedding addition).
    pub fn add_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        let c = av.cols();
        if vv.len() != c {
            return Err(Error::shape(alloc::format!("add_row: {} columns vs {}", c, vv.len())));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(vv.data()) {
                *x += *y;
            }
        }
        Ok(self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::AddRow(a, v)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * s).collect();
        self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::Scale(a, s))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("layer_norm affine size"));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| 0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x)))).collect();
        self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::Gelu(a))
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::Softmax(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != c {
                return Err(Error::shape(alloc::format!("concat_rows: {} vs {} columns", v.cols(), c)));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Tensor::from_parts(vec![rows, c], data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let r = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != r {
                return Err(Error::shape(alloc::format!("concat_cols: {} vs {} rows", v.rows(), r)));
            }
            total += v.cols();
        }
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for p in parts {
            let v = self.value(*p);
            let c = v.cols();
            for i in 0..r {
                data[i * total + off..i * total + off + c].copy_from_slice(v.row(i));
            }
            off += c;
        }
        Ok(self.push(Tensor::from_parts(vec![r, total], data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if len == 0 || start + len > av.rows() {
            return Err(Error::shape(alloc::format!("slice_rows {start}+{len} of {}", av.rows())));
        }
        let data = av.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, c], data), Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if len == 0 || start + len > c {
            return Err(Error::shape(alloc::format!("slice_cols {start}+{len} of {c}")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&av.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![r, len], data), Op::SliceCols(a, start)))
    }

    /// Picks entries by flat index into a rank-1 result.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if indices.is_empty() {
            return Err(Error::shape("gather of nothing"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.len()) {
            return Err(Error::shape(alloc::format!("gather index {bad} of {}", av.len())));
        }
        let data = indices.iter().map(|&i| av.data()[i]).collect();
        Ok(self.push(Tensor::from_parts(vec![indices.len()], data), Op::Gather(a, indices.to_vec())))
    }

    /// Row-wise dot product of `a[r x c]` with a length-`c` vector, giving `[r]`.
    pub fn dot_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        let c = av.cols();
        if vv.len() != c {
            return Err(Error::shape(alloc::format!("dot_rows: {} columns vs {}", c, vv.len())));
        }
        let data = av.data().chunks(c).map(|row| tensor::dot(row, vv.data())).collect();
        Ok(self.push(Tensor::from_parts(vec![av.rows()], data), Op::DotRows(a, v)))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| math::ln(x)).collect();
        self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Accumulates `d loss / d param` into `params` for every parameter recorded
    /// on this tape. Parameters that never entered the tape keep their gradient.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = params.get_mut(*id);
                    for (dst, src) in p.grad.data_mut().iter_mut().zip(&g) {
                        *dst += *src;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (r, k, c) = (av.rows(), av.cols(), bv.cols());
                    // dA = G B^T, dB = A^T G
                    let ga = acc(&mut grads, *a, av.len());
                    matmul_bt_into(&g, bv.data(), ga, r, c, k);
                    let gb = acc(&mut grads, *b, bv.len());
                    matmul_at_into(av.data(), &g, gb, r, k, c);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (r, k, c) = (av.rows(), av.cols(), bv.rows());
                    // out = A B^T: dA = G B, dB = G^T A
                    let ga = acc(&mut grads, *a, av.len());
                    matmul_into(&g, bv.data(), ga, r, c, k);
                    let gb = acc(&mut grads, *b, bv.len());
                    matmul_at_into(&g, av.data(), gb, r, c, k);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, -1.0);
                }
                Op::AddRow(a, v) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    let c = self.value(*v).len();
                    let gv = acc(&mut grads, *v, c);
                    for row in g.chunks(c) {
                        add_into(gv, row, 1.0);
                    }
                }
                Op::Scale(a, s) => add_into(acc(&mut grads, *a, g.len()), &g, *s),
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let c = self.value(*gamma).len();
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx = vec![0.0; g.len()];
                    for (i, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..c {
                            dgamma[j] += grow[j] * hrow[j];
                            dbeta[j] += grow[j];
                            let dh = grow[j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= c as f64;
                        mean_dh_h /= c as f64;
                        for j in 0..c {
                            let dh = grow[j] * gam[j];
                            dx[i * c + j] = inv_std[i] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    add_into(acc(&mut grads, *x, dx.len()), &dx, 1.0);
                    add_into(acc(&mut grads, *gamma, c), &dgamma, 1.0);
                    add_into(acc(&mut grads, *beta, c), &dbeta, 1.0);
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, av.len());
                    for ((dst, &x), &gy) in ga.iter_mut().zip(av.data()).zip(&g) {
                        let t = math::tanh(GELU_C * (x + GELU_A * x * x * x));
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *dst += gy * d;
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let ga = acc(&mut grads, *a, y.len());
                    for ((grow, yrow), dst) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s = tensor::dot(grow, yrow);
                        for j in 0..c {
                            dst[j] += yrow[j] * (grow[j] - s);
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        add_into(acc(&mut grads, *p, n), &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let r = node.value.rows();
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let gp = acc(&mut grads, *p, r * c);
                        for i in 0..r {
                            add_into(&mut gp[i * c..(i + 1) * c], &g[i * total + off..i * total + off + c], 1.0);
                        }
                        off += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let ga = acc(&mut grads, *a, av.len());
                    add_into(&mut ga[start * c..start * c + g.len()], &g, 1.0);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let len = node.value.cols();
                    let ga = acc(&mut grads, *a, av.len());
                    for (i, grow) in g.chunks(len).enumerate() {
                        add_into(&mut ga[i * c + start..i * c + start + len], grow, 1.0);
                    }
                }
                Op::Gather(a, indices) => {
                    let n = self.value(*a).len();
                    let ga = acc(&mut grads, *a, n);
                    for (&i, &gy) in indices.iter().zip(&g) {
                        ga[i] += gy;
                    }
                }
                Op::DotRows(a, v) => {
                    let (av, vv) = (self.value(*a), self.value(*v));
                    let c = vv.len();
                    let ga = acc(&mut grads, *a, av.len());
                    for (dst, &gy) in ga.chunks_mut(c).zip(&g) {
                        add_into(dst, vv.data(), gy);
                    }
                    let gv = acc(&mut grads, *v, c);
                    for (row, &gy) in av.data().chunks(c).zip(&g) {
                        add_into(gv, row, gy);
                    }
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, av.len());
                    for ((dst, &x), &gy) in ga.iter_mut().zip(av.data()).zip(&g) {
                        *dst += gy / x;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let s = g[0] / n as f64;
                    acc(&mut grads, *a, n).iter_mut().for_each(|d| *d += s);
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * *x;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
