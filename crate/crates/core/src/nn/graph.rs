//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns a gradient per
//! node. Parameters enter the tape through [`Graph::param`], which remembers
//! the parameter name so gradients can be folded back into a
//! [`ParamStore`](super::ParamStore).
//!
//! ```
//! use cfm::nn::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
//! let w = g.input(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
//! let y = g.matmul(x, w).unwrap();
//! let loss = g.sum(y).unwrap();
//! assert_eq!(g.value(loss).item(), 11.0);
//!
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0]);
//! ```

use std::hash::Hasher;

use super::conv::{self, ConvGeom};
use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv2d { x: Var, kernel: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, kernel: Var, geom: ConvGeom },
    LeakyRelu(Var, f64),
    Reshape(Var),
    ConcatCols(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    NegSqDist(Var, Var),
    InfoNce { logits: Var, include_positive: bool },
    AffineApply { coeffs: Var, z: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::AddRowBias(..) => "add_row_bias",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Reshape(..) => "reshape",
            Op::ConcatCols(..) => "concat_cols",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::NegSqDist(..) => "neg_sq_dist",
            Op::InfoNce { .. } => "infonce",
            Op::AffineApply { .. } => "affine_apply",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    kinks: std::collections::hash_map::DefaultHasher,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            kinks: Default::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parameters referenced on this tape, in first-use order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Hash of the sign pattern of every leaky-ReLU input seen so far.
    ///
    /// Two evaluations with equal signatures lie on the same linear piece of
    /// every activation, which lets finite-difference checks skip probes that
    /// straddle a kink.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.finish()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Load a named parameter from `store` onto the tape. Repeated calls with
    /// the same name return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.input(value);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// `y = a @ b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.value(a).data(), k, 1, self.value(b).data(), n, 1, T::zero(), &mut out, n, 1);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    /// `y = a @ b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("matmul_nt", format!("{sa:?} @ {sb:?}^T")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.value(a).data(), k, 1, self.value(b).data(), 1, k, T::zero(), &mut out, n, 1);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b))
    }

    /// Dense layer `x @ w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    /// `x: [B, n] + b: [n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(shape_err("add_row_bias", format!("{sx:?} + {sb:?}")));
        }
        let n = sb[0];
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = sx.to_vec();
        self.push(Tensor::new(shape, out)?, Op::AddRowBias(x, b))
    }

    /// `x: [B, C, H, W] + b: [C]` broadcast per channel.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 4 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(shape_err("add_channel_bias", format!("{sx:?} + {sb:?}")));
        }
        let plane = sx[2] * sx[3];
        let c = sx[1];
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|o| *o += bv);
        }
        let shape = sx.to_vec();
        self.push(Tensor::new(shape, out)?, Op::AddChannelBias(x, b))
    }

    /// Cross-correlation of `x: [B, C, H, W]` with `kernel: [F, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[1] != sx[1] || sk[2] != sk[3] {
            return Err(shape_err("conv2d", format!("input {sx:?}, kernel {sk:?}")));
        }
        let geom = ConvGeom::new(sx[1], sx[2], sx[3], sk[2], stride, pad).ok_or_else(|| {
            shape_err(
                "conv2d",
                format!("non-positive output for input {sx:?}, k={}, stride={stride}, pad={pad}", sk[2]),
            )
        })?;
        let y = conv::conv2d_forward(self.value(x).data(), self.value(kernel).data(), sk[0], &geom, sx[0]);
        self.push(
            Tensor::new(vec![sx[0], sk[0], geom.ho, geom.wo], y)?,
            Op::Conv2d { x, kernel, geom },
        )
    }

    /// Transposed convolution of `x: [B, C_in, H, W]` with
    /// `kernel: [C_in, C_out, k, k]`; output side is `(H-1)*stride - 2*pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[0] != sx[1] || sk[2] != sk[3] {
            return Err(shape_err("conv_transpose2d", format!("input {sx:?}, kernel {sk:?}")));
        }
        let geom = ConvGeom::transposed(sk[1], sx[2], sx[3], sk[2], stride, pad).ok_or_else(|| {
            shape_err(
                "conv_transpose2d",
                format!("invalid geometry for input {sx:?}, k={}, stride={stride}, pad={pad}", sk[2]),
            )
        })?;
        let y = conv::conv_transpose2d_forward(self.value(x).data(), self.value(kernel).data(), sx[1], &geom, sx[0]);
        self.push(
            Tensor::new(vec![sx[0], sk[1], geom.h, geom.w], y)?,
            Op::ConvTranspose2d { x, kernel, geom },
        )
    }

    /// Elementwise `max(x, slope * x)`. The derivative at exactly zero is
    /// `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidArgument(format!("leaky slope {slope} not in (0, 1)")));
        }
        let s = T::from_f64(slope);
        let mut word = 0u64;
        for (i, &v) in self.nodes[x.0].value.data().iter().enumerate() {
            word |= ((v > T::zero()) as u64) << (i % 64);
            if i % 64 == 63 {
                self.kinks.write_u64(word);
                word = 0;
            }
        }
        self.kinks.write_u64(word);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { s * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    /// `[B, p] ++ [B, q] -> [B, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shape_err("concat_cols", format!("{sa:?} ++ {sb:?}")));
        }
        let (rows, p, q) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            out.extend_from_slice(&av[r * p..(r + 1) * p]);
            out.extend_from_slice(&bv[r * q..(r + 1) * q]);
        }
        self.push(Tensor::new(vec![rows, p + q], out)?, Op::ConcatCols(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op.name(), format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let cs = T::from_f64(c);
        let out = self.value(x).map(|v| v * cs);
        self.push(out, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s: T = xv.data().iter().copied().sum();
        let m = s / T::from_f64(xv.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// `out[i, j] = -|a_i - b_j|^2` for `a: [m, d]`, `b: [n, d]`.
    pub fn neg_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("neg_sq_dist", format!("{sa:?} vs {sb:?}")));
        }
        let (m, n, d) = (sa[0], sb[0], sa[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..n {
                let bj = &bv[j * d..(j + 1) * d];
                let mut s = T::zero();
                for k in 0..d {
                    let diff = ai[k] - bj[k];
                    s += diff * diff;
                }
                out[i * n + j] = -s;
            }
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::NegSqDist(a, b))
    }

    /// Mean InfoNCE loss over rows of a square log-similarity matrix whose
    /// diagonal holds the positives. Evaluated with log-sum-exp.
    ///
    /// With `include_positive` the denominator sums every column; otherwise
    /// only the off-diagonal (negative) columns.
    pub fn infonce(&mut self, logits: Var, include_positive: bool) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != s[1] || s[0] < 2 {
            return Err(shape_err("infonce", format!("logits must be square with B >= 2, got {s:?}")));
        }
        let b = s[0];
        let lv = self.value(logits).data();
        let mut total = 0.0f64;
        for i in 0..b {
            let row = &lv[i * b..(i + 1) * b];
            let lse = row_lse(row, i, include_positive);
            total += lse - row[i].as_f64();
        }
        self.push(
            Tensor::scalar(T::from_f64(total / b as f64)),
            Op::InfoNce { logits, include_positive },
        )
    }

    /// `y_i = A_i z_i + c_i` where row `i` of `coeffs: [B, d*d + d]` holds
    /// `A_i` row-major followed by `c_i`.
    pub fn affine_apply(&mut self, coeffs: Var, z: Var) -> Result<Var> {
        let (sc, sz) = (self.shape(coeffs), self.shape(z));
        if sc.len() != 2 || sz.len() != 2 || sc[0] != sz[0] || sc[1] != sz[1] * sz[1] + sz[1] {
            return Err(shape_err("affine_apply", format!("coeffs {sc:?}, z {sz:?}")));
        }
        let (rows, d) = (sz[0], sz[1]);
        let width = d * d + d;
        let (cv, zv) = (self.value(coeffs).data(), self.value(z).data());
        let mut out = vec![T::zero(); rows * d];
        for i in 0..rows {
            let p = &cv[i * width..(i + 1) * width];
            let zi = &zv[i * d..(i + 1) * d];
            for r in 0..d {
                let mut s = p[d * d + r];
                for c in 0..d {
                    s += p[r * d + c] * zi[c];
                }
                out[i * d + r] = s;
            }
        }
        self.push(Tensor::new(vec![rows, d], out)?, Op::AffineApply { coeffs, z })
    }

    /// Reverse pass from a scalar node. Returns gradients for every node that
    /// the scalar depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", self.nodes[idx].op.name())));
            }
            for (target, contrib) in self.local_grads(idx, &g)? {
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, idx: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let gd = g.data();
        let val = |v: Var| self.value(v);
        let out = match &self.nodes[idx].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), gd, n, 1, val(*b).data(), 1, n, T::zero(), &mut da, k, 1);
                let mut db = vec![T::zero(); k * n];
                T::gemm(k, m, n, T::one(), val(*a).data(), 1, k, gd, n, 1, T::zero(), &mut db, n, 1);
                vec![(*a, Tensor::new(sa.to_vec(), da)?), (*b, Tensor::new(sb.to_vec(), db)?)]
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                // da = g @ b, db = g^T @ a
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), gd, n, 1, val(*b).data(), k, 1, T::zero(), &mut da, k, 1);
                let mut db = vec![T::zero(); n * k];
                T::gemm(n, m, k, T::one(), gd, 1, n, val(*a).data(), k, 1, T::zero(), &mut db, k, 1);
                vec![(*a, Tensor::new(sa.to_vec(), da)?), (*b, Tensor::new(sb.to_vec(), db)?)]
            }
            Op::AddRowBias(x, b) => {
                let n = val(*b).len();
                let mut db = vec![T::zero(); n];
                for row in gd.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*x, g.clone()), (*b, Tensor::new(vec![n], db)?)]
            }
            Op::AddChannelBias(x, b) => {
                let s = val(*x).shape();
                let (c, plane) = (s[1], s[2] * s[3]);
                let mut db = vec![T::zero(); c];
                for (i, chunk) in gd.chunks(plane).enumerate() {
                    db[i % c] += chunk.iter().copied().sum::<T>();
                }
                vec![(*x, g.clone()), (*b, Tensor::new(vec![c], db)?)]
            }
            Op::Conv2d { x, kernel, geom } => {
                let (sx, sk) = (val(*x).shape(), val(*kernel).shape());
                let (dx, dk) = conv::conv2d_backward(val(*x).data(), val(*kernel).data(), gd, sk[0], geom, sx[0]);
                vec![(*x, Tensor::new(sx.to_vec(), dx)?), (*kernel, Tensor::new(sk.to_vec(), dk)?)]
            }
            Op::ConvTranspose2d { x, kernel, geom } => {
                let (sx, sk) = (val(*x).shape(), val(*kernel).shape());
                let (dx, dk) =
                    conv::conv_transpose2d_backward(val(*x).data(), val(*kernel).data(), gd, sx[1], geom, sx[0]);
                vec![(*x, Tensor::new(sx.to_vec(), dx)?), (*kernel, Tensor::new(sk.to_vec(), dk)?)]
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                let xv = val(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { s * gv })
                    .collect();
                vec![(*x, Tensor::new(val(*x).shape().to_vec(), dx)?)]
            }
            Op::Reshape(x) => vec![(*x, g.clone().reshape(val(*x).shape())?)],
            Op::ConcatCols(a, b) => {
                let (p, q) = (val(*a).shape()[1], val(*b).shape()[1]);
                let mut da = Vec::with_capacity(val(*a).len());
                let mut db = Vec::with_capacity(val(*b).len());
                for row in gd.chunks(p + q) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                vec![
                    (*a, Tensor::new(val(*a).shape().to_vec(), da)?),
                    (*b, Tensor::new(val(*b).shape().to_vec(), db)?),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Scale(x, c) => {
                let cs = T::from_f64(*c);
                vec![(*x, g.map(|v| v * cs))]
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                let dx = gd.iter().zip(val(*x).data()).map(|(&gv, &xv)| two * xv * gv).collect();
                vec![(*x, Tensor::new(val(*x).shape().to_vec(), dx)?)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), gd[0]))],
            Op::Mean(x) => {
                let n = T::from_f64(val(*x).len() as f64);
                vec![(*x, Tensor::full(val(*x).shape(), gd[0] / n))]
            }
            Op::NegSqDist(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, n, d) = (sa[0], sb[0], sa[1]);
                let (av, bv) = (val(*a).data(), val(*b).data());
                let two = T::from_f64(2.0);
                let mut da = vec![T::zero(); m * d];
                let mut db = vec![T::zero(); n * d];
                for i in 0..m {
                    for j in 0..n {
                        let w = two * gd[i * n + j];
                        for k in 0..d {
                            let diff = av[i * d + k] - bv[j * d + k];
                            da[i * d + k] -= w * diff;
                            db[j * d + k] += w * diff;
                        }
                    }
                }
                vec![(*a, Tensor::new(sa.to_vec(), da)?), (*b, Tensor::new(sb.to_vec(), db)?)]
            }
            Op::InfoNce { logits, include_positive } => {
                let b = val(*logits).shape()[0];
                let lv = val(*logits).data();
                let scale = gd[0].as_f64() / b as f64;
                let mut dl = vec![T::zero(); b * b];
                for i in 0..b {
                    let row = &lv[i * b..(i + 1) * b];
                    let lse = row_lse(row, i, *include_positive);
                    for j in 0..b {
                        let in_denominator = *include_positive || j != i;
                        let mut d = if in_denominator {
                            (row[j].as_f64() - lse).exp()
                        } else {
                            0.0
                        };
                        if j == i {
                            d -= 1.0;
                        }
                        dl[i * b + j] = T::from_f64(d * scale);
                    }
                }
                vec![(*logits, Tensor::new(vec![b, b], dl)?)]
            }
            Op::AffineApply { coeffs, z } => {
                let (rows, d) = (val(*z).shape()[0], val(*z).shape()[1]);
                let width = d * d + d;
                let (cv, zv) = (val(*coeffs).data(), val(*z).data());
                let mut dc = vec![T::zero(); rows * width];
                let mut dz = vec![T::zero(); rows * d];
                for i in 0..rows {
                    let p = &cv[i * width..(i + 1) * width];
                    let zi = &zv[i * d..(i + 1) * d];
                    let gi = &gd[i * d..(i + 1) * d];
                    let dp = &mut dc[i * width..(i + 1) * width];
                    for r in 0..d {
                        dp[d * d + r] = gi[r];
                        for c in 0..d {
                            dp[r * d + c] = gi[r] * zi[c];
                            dz[i * d + c] += p[r * d + c] * gi[r];
                        }
                    }
                }
                vec![
                    (*coeffs, Tensor::new(val(*coeffs).shape().to_vec(), dc)?),
                    (*z, Tensor::new(vec![rows, d], dz)?),
                ]
            }
        };
        Ok(out)
    }
}

/// Log-sum-exp of a row, optionally excluding the diagonal entry `skip`.
/// Log-sum-exp of a row, optionally skipping column `skip`. Terms are summed
/// in sorted order so the result depends only on the multiset of logits.
fn row_lse<T: Scalar>(row: &[T], skip: usize, include_skip: bool) -> f64 {
    let keep = |j: usize| include_skip || j != skip;
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, v)| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut terms: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, v)| (v.as_f64() - max).exp())
        .collect();
    terms.sort_unstable_by(f64::total_cmp);
    max + terms.iter().sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_forced_values() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.input(t(&[2], &[0.0, 0.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.input(t(&[1, 2], &[1.0, 0.0]));
        let w = g.input(t(&[2, 2], &[2.0, 3.0, 5.0, 7.0]));
        let b = g.input(t(&[2], &[1.0, 1.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = g.input(t(&[2, 2], &[1.0; 4]));
        let err = g.matmul(x, w).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn conv_identity_and_ones() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let x = g.input(t(&[1, 2, 3, 3], &data));
        // 1x1 kernel, 2 -> 2 channels, identity mixing.
        let k = g.input(t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), data.as_slice());

        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn conv_rejects_empty_output() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 2, 2], 1.0));
        let k = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        assert!(matches!(g.conv2d(x, k, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn leaky_relu_values_and_zero_convention() {
        let mut g = Graph::new();
        let x = g.input(t(&[3], &[2.0, -1.0, 0.0]));
        let y = g.leaky_relu(x, 0.01).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, -0.01, 0.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.01, 0.01]);
    }

    #[test]
    fn infonce_equal_logits_is_log_batch() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros(&[128, 128]));
        let loss = g.infonce(l, true).unwrap();
        assert!((g.value(loss).item() - 128f64.ln()).abs() < 1e-12);
        let l2 = g.input(Tensor::zeros(&[128, 128]));
        let loss2 = g.infonce(l2, false).unwrap();
        assert!((g.value(loss2).item() - 127f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.input(t(&[1], &[f64::MAX]));
        assert!(matches!(g.square(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn affine_apply_identity() {
        let mut g = Graph::new();
        let d = 3;
        let mut coeffs = vec![0.0; d * d + d];
        for i in 0..d {
            coeffs[i * d + i] = 1.0;
        }
        let c = g.input(t(&[1, d * d + d], &coeffs));
        let z = g.input(t(&[1, d], &[0.5, -2.0, 3.0]));
        let y = g.affine_apply(c, z).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 3.0]);
    }
}
