//! Parameterized layers shared by both stages.

use autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

/// `y = x W + b` over the last axis. `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::randn([d_in, d_out], (1.0 / d_in as f64).sqrt(), rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([d_out]));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w);
        g.add(y, b)
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm_last(x, LN_EPS);
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        let y = g.mul(n, ga);
        g.add(y, be)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

/// Result of one attention call: projected output and the row-stochastic
/// attention weights `[B, heads, Tq, Tk]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOut {
    pub out: Var,
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// `xq: [B, Tq, D]`, `xkv: [B, Tk, D]`.
    pub fn forward(&self, g: &mut Graph, xq: Var, xkv: Var) -> AttentionOut {
        let (b, tq, d) = {
            let s = g.shape(xq);
            (s[0], s[1], s[2])
        };
        let tk = g.shape(xkv)[1];
        let (h, dh) = (self.heads, d / self.heads);
        let q = self.q.forward(g, xq);
        let k = self.k.forward(g, xkv);
        let v = self.v.forward(g, xkv);
        let q = g.reshape(q, &[b, tq, h, dh]);
        let q = g.permute(q, &[0, 2, 1, 3]);
        let k = g.reshape(k, &[b, tk, h, dh]);
        let kt = g.permute(k, &[0, 2, 3, 1]);
        let v = g.reshape(v, &[b, tk, h, dh]);
        let v = g.permute(v, &[0, 2, 1, 3]);
        let scores = g.matmul(q, kt);
        let scores = g.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let weights = g.softmax_last(scores);
        let ctx = g.matmul(weights, v);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, tq, d]);
        AttentionOut { out: self.o.forward(g, ctx), weights }
    }
}

/// Two-layer GELU feed-forward block.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        FeedForward {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// 2-D convolution layer, weights `[O, C, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let w = store.add(format!("{name}.w"), Tensor::randn([c_out, c_in, k, k], (1.0 / fan_in).sqrt(), rng));
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros([c_out])));
        Conv2d { w, b, stride, pad: k / 2 }
    }

    /// Same as [`Conv2d::new`] but with all weights zero.
    pub fn zeros(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros([c_out, c_in, k, k]));
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros([c_out])));
        Conv2d { w, b, stride, pad: k / 2 }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Scalar parameter count of a closed-form conv layer, for cross-checks.
pub fn conv_param_count(c_in: usize, c_out: usize, k: usize) -> usize {
    c_out * c_in * k * k + c_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn conv_layer_count_matches_closed_form() {
        let mut s = ParamStore::new();
        Conv2d::new(&mut s, "c", 3, 5, 3, 1, &mut seeded_rng(0, 0));
        assert_eq!(s.num_scalars(), conv_param_count(3, 5, 3));
    }

    #[test]
    fn attention_shapes() {
        let mut s = ParamStore::new();
        let mut rng = seeded_rng(1, 0);
        let att = MultiHeadAttention::new(&mut s, "a", 8, 2, &mut rng);
        let mut g = Graph::with_params(&s);
        let q = g.constant(Tensor::randn([3, 4, 8], 1.0, &mut rng));
        let kv = g.constant(Tensor::randn([3, 6, 8], 1.0, &mut rng));
        let o = att.forward(&mut g, q, kv);
        assert_eq!(g.shape(o.out), [3, 4, 8]);
        assert_eq!(g.shape(o.weights), [3, 2, 4, 6]);
    }
}
