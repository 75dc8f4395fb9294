use std::collections::HashMap;

use crate::kernels::{self, BilinearTap, ConvGeom, NormKind};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Silu,
    /// tanh approximation
    Gelu,
    Sin,
    Cos,
    Abs,
    Square,
    Softplus,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Unary::Silu => x * sigmoid(x),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Softplus => sigmoid(x),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Unary(Var, Unary),
    SumAxis { x: Var, axis: usize },
    SumAll(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    IndexSelect { x: Var, axis: usize, indices: Vec<usize> },
    Softmax(Var),
    Normalize { x: Var, kind: NormKind, inv: Vec<f64>, sd: Vec<f64> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
    Upsample2x(Var),
    BilinearSample { feat: Var, coords: Var, taps: Vec<BilinearTap> },
    Clamp { x: Var, lo: f64, hi: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations.
///
/// Parameter stores are attached by reference; values are copied onto the
/// tape when first used, so the stores can be updated freely once the graph
/// is dropped.
pub struct Graph<'a> {
    nodes: Vec<Node>,
    stores: Vec<(&'a ParamStore, bool)>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), stores: Vec::new(), param_vars: HashMap::new() }
    }

    /// Graph with `store` attached as trainable.
    pub fn with_params(store: &'a ParamStore) -> Self {
        let mut g = Self::new();
        g.attach(store, true);
        g
    }

    /// Attaches a store. Parameters of a frozen store enter the tape as constants.
    pub fn attach(&mut self, store: &'a ParamStore, trainable: bool) {
        self.stores.push((store, trainable));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient (used for inputs under test).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Places a parameter on the tape. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let (store, trainable) = *self
            .stores
            .iter()
            .find(|(s, _)| s.id() == id.store())
            .expect("parameter store is not attached to this graph");
        let value = store.get(id).clone();
        let v = if trainable { self.push(value, Op::Param, true) } else { self.constant(value) };
        self.param_vars.insert(id, v);
        v
    }

    /// Copy of `v` cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: fn(Var, Var) -> Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = kernels::broadcast_shape(ta.shape(), tb.shape())
            .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", ta.shape(), tb.shape()));
        let data = kernels::broadcast_binary(ta.data(), ta.shape(), tb.data(), tb.shape(), &shape, f);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, data), op(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(t, Op::MulScalar(a, s), rg)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let t = self.value(a).map(|v| f.apply(v));
        let rg = self.rg(a);
        self.push(t, Op::Unary(a, f), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        let t = self.value(x);
        assert!(axis < t.ndim(), "axis {axis} out of range for {:?}", t.shape());
        let data = kernels::sum_axis(t.data(), t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, data), Op::SumAxis { x, axis }, rg)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis);
        self.mul_scalar(s, 1.0 / n)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Matrix product over the last two axes. `b` is either 2-D (shared across
    /// the batch) or has the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs matrices, got {sa:?} and {sb:?}");
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        assert_eq!(k, k2, "matmul inner dims differ: {sa:?} x {sb:?}");
        let batch_shape = &sa[..sa.len() - 2];
        let batch = numel(batch_shape);
        let mut shape = batch_shape.to_vec();
        shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        if sb.len() == 2 {
            kernels::gemm(batch * m, k, n, 1.0, ta.data(), (k, 1), tb.data(), (n, 1), 0.0, &mut out, (n, 1));
        } else {
            assert_eq!(&sb[..sb.len() - 2], batch_shape, "matmul batch dims differ: {sa:?} x {sb:?}");
            for i in 0..batch {
                kernels::gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &ta.data()[i * m * k..],
                    (k, 1),
                    &tb.data()[i * k * n..],
                    (n, 1),
                    0.0,
                    &mut out[i * m * n..],
                    (n, 1),
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out), Op::MatMul(a, b), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape.to_vec());
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let mut seen = vec![false; axes.len()];
        for &a in axes {
            assert!(a < axes.len() && !seen[a], "invalid permutation {axes:?}");
            seen[a] = true;
        }
        let t = self.value(x).permute(axes);
        let rg = self.rg(x);
        self.push(t, Op::Permute { x, axes: axes.to_vec() }, rg)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Var {
        let nd = self.shape(x).len();
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty());
        let first = self.shape(xs[0]).to_vec();
        let mut shape = first.clone();
        shape[axis] = 0;
        for &v in xs {
            let s = self.shape(v);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {s:?} vs {first:?} on axis {axis}");
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        self.push(Tensor::new(shape, out), Op::Concat { xs: xs.to_vec(), axis }, rg)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let t = self.value(x);
        assert!(start + len <= t.shape()[axis], "narrow out of range");
        let (outer, full, inner) = kernels::axis_split(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out), Op::Narrow { x, axis, start }, rg)
    }

    /// Gathers slices along `axis` in the given order (indices may repeat).
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Var {
        let t = self.value(x);
        let (outer, full, inner) = kernels::axis_split(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                assert!(i < full, "index {i} out of range for axis of size {full}");
                let base = (o * full + i) * inner;
                out.extend_from_slice(&t.data()[base..base + inner]);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = indices.len();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out), Op::IndexSelect { x, axis, indices: indices.to_vec() }, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().expect("softmax of a scalar");
        let data = kernels::softmax_rows(t.data(), n);
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, data), Op::Softmax(x), rg)
    }

    fn normalize(&mut self, x: Var, eps: f64, kind: NormKind) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().expect("normalize of a scalar");
        let (data, inv, sd) = kernels::normalize_rows(t.data(), n, eps, kind);
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, data), Op::Normalize { x, kind, inv, sd }, rg)
    }

    /// `(x - mean) / sqrt(var + eps)` over the last axis, without affine terms.
    pub fn layer_norm_last(&mut self, x: Var, eps: f64) -> Var {
        self.normalize(x, eps, NormKind::Layer)
    }

    /// `(x - mean) / (std + eps)` over the last axis (population std).
    pub fn std_norm_last(&mut self, x: Var, eps: f64) -> Var {
        self.normalize(x, eps, NormKind::InstanceStd)
    }

    /// 2-D cross-correlation of `x: [B, C, H, W]` with `w: [O, C, kh, kw]`,
    /// zero padding, optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        assert_eq!(tx.ndim(), 4, "conv2d input must be [B,C,H,W], got {:?}", tx.shape());
        assert_eq!(tw.ndim(), 4, "conv2d weight must be [O,C,kh,kw], got {:?}", tw.shape());
        let (bsz, c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (o, c2, kh, kw) = (tw.shape()[0], tw.shape()[1], tw.shape()[2], tw.shape()[3]);
        assert_eq!(c, c2, "conv2d channel mismatch: input {c}, weight {c2}");
        let geom = ConvGeom::new(c, h, wd, kh, kw, stride, pad).expect("conv2d kernel larger than padded input");
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; bsz * rows * ncol];
        let mut out = vec![0.0; bsz * o * ncol];
        for bi in 0..bsz {
            let xb = &tx.data()[bi * c * h * wd..(bi + 1) * c * h * wd];
            let cb = &mut cols[bi * rows * ncol..(bi + 1) * rows * ncol];
            kernels::im2col(xb, &geom, cb);
            kernels::gemm(o, rows, ncol, 1.0, tw.data(), (rows, 1), cb, (ncol, 1), 0.0, &mut out[bi * o * ncol..], (ncol, 1));
        }
        if let Some(bv) = b {
            let tb = self.value(bv);
            assert_eq!(tb.shape(), [o], "conv2d bias must be [{o}]");
            for bi in 0..bsz {
                for (oc, &bias) in tb.data().iter().enumerate() {
                    let base = (bi * o + oc) * ncol;
                    out[base..base + ncol].iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|bv| self.rg(bv));
        let shape = vec![bsz, o, geom.h_out, geom.w_out];
        self.push(Tensor::new(shape, out), Op::Conv2d { x, w, b, geom, cols }, rg)
    }

    /// Bilinear 2x upsampling of the last two axes (half-pixel centres, clamped edges).
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let nd = t.ndim();
        assert!(nd >= 2);
        let (h, w) = (t.shape()[nd - 2], t.shape()[nd - 1]);
        let planes = numel(&t.shape()[..nd - 2]);
        let data = kernels::upsample2x(t.data(), planes, h, w);
        let mut shape = t.shape().to_vec();
        shape[nd - 2] = 2 * h;
        shape[nd - 1] = 2 * w;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, data), Op::Upsample2x(x), rg)
    }

    /// Samples `feat: [B, C, H, W]` at `coords: [B, P, 2]` (x, y in pixel-index
    /// units) with bilinear weights and replicated borders. Output `[B, C, P]`.
    pub fn bilinear_sample(&mut self, feat: Var, coords: Var) -> Var {
        let (tf, tc) = (self.value(feat), self.value(coords));
        assert_eq!(tf.ndim(), 4, "bilinear_sample features must be [B,C,H,W]");
        let (bsz, c, h, w) = (tf.shape()[0], tf.shape()[1], tf.shape()[2], tf.shape()[3]);
        assert!(tc.ndim() == 3 && tc.shape()[0] == bsz && tc.shape()[2] == 2, "coords must be [B,P,2]");
        let p = tc.shape()[1];
        let taps: Vec<BilinearTap> = tc
            .data()
            .chunks_exact(2)
            .map(|xy| BilinearTap::new(xy[0], xy[1], h, w))
            .collect();
        let mut out = vec![0.0; bsz * c * p];
        for bi in 0..bsz {
            for ci in 0..c {
                let plane = &tf.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                let dst = &mut out[(bi * c + ci) * p..(bi * c + ci + 1) * p];
                for (pi, d) in dst.iter_mut().enumerate() {
                    *d = taps[bi * p + pi].sample(plane, w);
                }
            }
        }
        let rg = self.rg(feat) || self.rg(coords);
        self.push(Tensor::new(vec![bsz, c, p], out), Op::BilinearSample { feat, coords, taps }, rg)
    }

    /// Clamps to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(t, Op::Clamp { x, lo, hi }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        for (&id, &v) in &self.param_vars {
            if matches!(self.nodes[v.0].op, Op::Param) {
                params.push((id, v));
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d)))
            .collect();
        Gradients { grads, params }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, x)| *e += x),
            slot @ None => *slot = Some(d),
        }
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let want_a = self.rg(*a);
                let want_b = self.rg(*b);
                let (fa, fb): (&dyn Fn(f64, f64, f64) -> f64, &dyn Fn(f64, f64, f64) -> f64) = match node.op {
                    Op::Add(..) => (&|g, _, _| g, &|g, _, _| g),
                    Op::Sub(..) => (&|g, _, _| g, &|g, _, _| -g),
                    Op::Mul(..) => (&|g, _, y| g * y, &|g, x, _| g * x),
                    _ => (&|g, _, y| g / y, &|g, x, y| -g * x / (y * y)),
                };
                let (da, db) = kernels::broadcast_binary_backward(
                    g,
                    ta.data(),
                    ta.shape(),
                    tb.data(),
                    tb.shape(),
                    out_shape,
                    want_a.then_some(fa),
                    want_b.then_some(fb),
                );
                if let Some(d) = da {
                    self.acc(grads, *a, d);
                }
                if let Some(d) = db {
                    self.acc(grads, *b, d);
                }
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.to_vec()),
            Op::MulScalar(a, s) => self.acc(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::Unary(a, f) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let d = g.iter().zip(x).zip(y).map(|((&gv, &xv), &yv)| gv * f.derivative(xv, yv)).collect();
                self.acc(grads, *a, d);
            }
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = kernels::axis_split(shape, *axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        d[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(src);
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.acc(grads, *x, vec![g[0]; n]);
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Reshape(x) => self.acc(grads, *x, g.to_vec()),
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                let gt = Tensor::new(out_shape.to_vec(), g.to_vec()).permute(&inv);
                self.acc(grads, *x, gt.into_data());
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = kernels::axis_split(out_shape, *axis);
                let mut parts: Vec<Vec<f64>> = xs.iter().map(|&v| Vec::with_capacity(self.value(v).len())).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, &v) in xs.iter().enumerate() {
                        let chunk = self.shape(v)[*axis] * inner;
                        parts[k].extend_from_slice(&g[pos..pos + chunk]);
                        pos += chunk;
                    }
                }
                for (&v, d) in xs.iter().zip(parts) {
                    self.acc(grads, v, d);
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, full, inner) = kernels::axis_split(shape, *axis);
                let len = out_shape[*axis];
                let mut d = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.acc(grads, *x, d);
            }
            Op::IndexSelect { x, axis, indices } => {
                let shape = self.shape(*x);
                let (outer, full, inner) = kernels::axis_split(shape, *axis);
                let mut d = vec![0.0; outer * full * inner];
                let mut pos = 0;
                for o in 0..outer {
                    for &i in indices {
                        let base = (o * full + i) * inner;
                        d[base..base + inner].iter_mut().zip(&g[pos..pos + inner]).for_each(|(a, b)| *a += b);
                        pos += inner;
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::Softmax(x) => {
                let n = *out_shape.last().unwrap();
                self.acc(grads, *x, kernels::softmax_rows_backward(node.value.data(), g, n));
            }
            Op::Normalize { x, kind, inv, sd } => {
                let n = *out_shape.last().unwrap();
                let d = kernels::normalize_rows_backward(node.value.data(), g, inv, sd, n, *kind);
                self.acc(grads, *x, d);
            }
            Op::Conv2d { x, w, b, geom, cols } => self.conv_backward(*x, *w, *b, geom, cols, g, grads),
            Op::Upsample2x(x) => {
                let shape = self.shape(*x);
                let nd = shape.len();
                let (h, w) = (shape[nd - 2], shape[nd - 1]);
                let planes = numel(&shape[..nd - 2]);
                self.acc(grads, *x, kernels::upsample2x_backward(g, planes, h, w));
            }
            Op::BilinearSample { feat, coords, taps } => {
                let tf = self.value(*feat);
                let (bsz, c, h, w) = (tf.shape()[0], tf.shape()[1], tf.shape()[2], tf.shape()[3]);
                let p = out_shape[2];
                if self.rg(*feat) {
                    let mut d = vec![0.0; tf.len()];
                    for bi in 0..bsz {
                        for ci in 0..c {
                            let plane = &mut d[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                            let gp = &g[(bi * c + ci) * p..(bi * c + ci + 1) * p];
                            for (pi, &gv) in gp.iter().enumerate() {
                                taps[bi * p + pi].scatter(plane, w, gv);
                            }
                        }
                    }
                    self.acc(grads, *feat, d);
                }
                if self.rg(*coords) {
                    let mut d = vec![0.0; bsz * p * 2];
                    for bi in 0..bsz {
                        for ci in 0..c {
                            let plane = &tf.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                            let gp = &g[(bi * c + ci) * p..(bi * c + ci + 1) * p];
                            for (pi, &gv) in gp.iter().enumerate() {
                                let (dx, dy) = taps[bi * p + pi].grad_xy(plane, w);
                                d[(bi * p + pi) * 2] += gv * dx;
                                d[(bi * p + pi) * 2 + 1] += gv * dy;
                            }
                        }
                    }
                    self.acc(grads, *coords, d);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect();
                self.acc(grads, *x, d);
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch = numel(&sa[..sa.len() - 2]);
        let shared = sb.len() == 2;
        if self.rg(a) {
            // dA = G · Bᵀ
            let mut da = vec![0.0; ta.len()];
            for i in 0..batch {
                let boff = if shared { 0 } else { i * k * n };
                kernels::gemm(m, n, k, 1.0, &g[i * m * n..], (n, 1), &tb.data()[boff..], (1, n), 0.0, &mut da[i * m * k..], (k, 1));
            }
            self.acc(grads, a, da);
        }
        if self.rg(b) {
            // dB = Aᵀ · G
            let mut db = vec![0.0; tb.len()];
            if shared {
                kernels::gemm(k, batch * m, n, 1.0, ta.data(), (1, k), g, (n, 1), 0.0, &mut db, (n, 1));
            } else {
                for i in 0..batch {
                    kernels::gemm(k, m, n, 1.0, &ta.data()[i * m * k..], (1, k), &g[i * m * n..], (n, 1), 0.0, &mut db[i * k * n..], (n, 1));
                }
            }
            self.acc(grads, b, db);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
        cols: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (tx, tw) = (self.value(x), self.value(w));
        let bsz = tx.shape()[0];
        let o = tw.shape()[0];
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let plane = geom.c_in * geom.h * geom.w;
        if let Some(bv) = b {
            if self.rg(bv) {
                let mut db = vec![0.0; o];
                for bi in 0..bsz {
                    for (oc, d) in db.iter_mut().enumerate() {
                        let base = (bi * o + oc) * ncol;
                        *d += g[base..base + ncol].iter().sum::<f64>();
                    }
                }
                self.acc(grads, bv, db);
            }
        }
        if self.rg(w) {
            let mut dw = vec![0.0; tw.len()];
            for bi in 0..bsz {
                // dW += G_b · colsᵀ
                kernels::gemm(o, ncol, rows, 1.0, &g[bi * o * ncol..], (ncol, 1), &cols[bi * rows * ncol..], (1, ncol), 1.0, &mut dw, (rows, 1));
            }
            self.acc(grads, w, dw);
        }
        if self.rg(x) {
            let mut dx = vec![0.0; tx.len()];
            let mut dcols = vec![0.0; rows * ncol];
            for bi in 0..bsz {
                // dcols = Wᵀ · G_b
                kernels::gemm(rows, o, ncol, 1.0, tw.data(), (1, rows), &g[bi * o * ncol..], (ncol, 1), 0.0, &mut dcols, (ncol, 1));
                kernels::col2im(&dcols, geom, &mut dx[bi * plane..(bi + 1) * plane]);
            }
            self.acc(grads, x, dx);
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a trainable parameter, if it took part in the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.get(*v))
    }

    /// All parameter gradients, ordered by parameter index.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> =
            self.params.iter().filter_map(|(p, v)| self.get(*v).map(|g| (*p, g))).collect();
        out.sort_by_key(|(p, _)| p.index());
        out
    }
}
