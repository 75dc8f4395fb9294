//! Reference-alignment modules used inside decoder stages: cross-attention
//! (the default), flow warping and deformable sampling.

use std::fmt;
use std::str::FromStr;

use autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::Error;
use crate::nn::{Conv2d, MultiHeadAttention};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlignmentKind {
    FiaCrossAttention,
    FlowWarp,
    Deformation,
}

impl AlignmentKind {
    pub const ALL: [AlignmentKind; 3] = [AlignmentKind::FiaCrossAttention, AlignmentKind::FlowWarp, AlignmentKind::Deformation];

    pub fn name(self) -> &'static str {
        match self {
            AlignmentKind::FiaCrossAttention => "fia",
            AlignmentKind::FlowWarp => "flow",
            AlignmentKind::Deformation => "deformation",
        }
    }
}

impl fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlignmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "fia" | "cross_attention" => Ok(AlignmentKind::FiaCrossAttention),
            "flow" => Ok(AlignmentKind::FlowWarp),
            "deformation" | "deform" => Ok(AlignmentKind::Deformation),
            _ => Err(Error::Config(format!("unknown alignment `{s}` (expected fia, flow or deformation)"))),
        }
    }
}

/// Flattens `[B, C, H, W]` to tokens `[B, H*W, C]`.
pub fn to_tokens(g: &mut Graph, f: Var) -> Var {
    let s = g.shape(f).to_vec();
    let t = g.reshape(f, &[s[0], s[1], s[2] * s[3]]);
    g.permute(t, &[0, 2, 1])
}

/// Inverse of [`to_tokens`].
pub fn from_tokens(g: &mut Graph, t: Var, h: usize, w: usize) -> Var {
    let s = g.shape(t).to_vec();
    let f = g.permute(t, &[0, 2, 1]);
    g.reshape(f, &[s[0], s[2], h, w])
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) {
    assert_eq!(g.shape(a), g.shape(b), "{what}: query and reference feature shapes differ");
}

/// Pixel grid `(x, y)` for every location, `[H*W, 2]`, plus optional tap offsets.
fn grid(h: usize, w: usize, taps: &[(f64, f64)]) -> Tensor {
    let mut d = Vec::with_capacity(taps.len() * h * w * 2);
    for &(dx, dy) in taps {
        for y in 0..h {
            for x in 0..w {
                d.push(x as f64 + dx);
                d.push(y as f64 + dy);
            }
        }
    }
    Tensor::new([taps.len() * h * w, 2], d)
}

/// Samples `f_ref` at `pixel + offsets`, with `offsets: [B, 2, H, W]` holding
/// `(dx, dy)` channels. Borders replicate.
pub fn warp(g: &mut Graph, f_ref: Var, offsets: Var) -> Var {
    let s = g.shape(f_ref).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let o = g.reshape(offsets, &[b, 2, h * w]);
    let o = g.permute(o, &[0, 2, 1]);
    let base = g.constant(grid(h, w, &[(0.0, 0.0)]));
    let coords = g.add(o, base);
    let sampled = g.bilinear_sample(f_ref, coords);
    g.reshape(sampled, &[b, c, h, w])
}

#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub attn: MultiHeadAttention,
}

#[derive(Clone, Debug)]
pub struct FlowAlign {
    pub hidden: Conv2d,
    pub out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DeformAlign {
    /// Predicts `(dx, dy)` for each of the 9 taps from the query features.
    pub offsets: Conv2d,
    /// Combine weights `[C, C, 3, 3]`.
    pub weight: ParamId,
    pub bias: ParamId,
}

pub const DEFORM_TAPS: [(f64, f64); 9] = [
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
    (-1.0, 0.0),
    (0.0, 0.0),
    (1.0, 0.0),
    (-1.0, 1.0),
    (0.0, 1.0),
    (1.0, 1.0),
];

#[derive(Clone, Debug)]
pub enum Aligner {
    Cross(CrossAttention),
    Flow(FlowAlign),
    Deform(DeformAlign),
}

impl Aligner {
    pub fn new<R: Rng>(kind: AlignmentKind, store: &mut ParamStore, name: &str, c: usize, heads: usize, rng: &mut R) -> Self {
        match kind {
            AlignmentKind::FiaCrossAttention => {
                Aligner::Cross(CrossAttention { attn: MultiHeadAttention::new(store, &format!("{name}.xattn"), c, heads, rng) })
            }
            AlignmentKind::FlowWarp => {
                let hid = (c / 4).max(1);
                Aligner::Flow(FlowAlign {
                    hidden: Conv2d::new(store, &format!("{name}.flow.hidden"), 2 * c, hid, 3, 1, rng),
                    out: Conv2d::zeros(store, &format!("{name}.flow.out"), hid, 2, 3, 1),
                })
            }
            AlignmentKind::Deformation => {
                let std = (1.0 / (9 * c) as f64).sqrt();
                Aligner::Deform(DeformAlign {
                    offsets: Conv2d::zeros(store, &format!("{name}.deform.offsets"), c, 18, 3, 1),
                    weight: store.add(format!("{name}.deform.w"), Tensor::randn([c, c, 3, 3], std, rng)),
                    bias: store.add(format!("{name}.deform.b"), Tensor::zeros([c])),
                })
            }
        }
    }

    pub fn kind(&self) -> AlignmentKind {
        match self {
            Aligner::Cross(_) => AlignmentKind::FiaCrossAttention,
            Aligner::Flow(_) => AlignmentKind::FlowWarp,
            Aligner::Deform(_) => AlignmentKind::Deformation,
        }
    }

    /// Aligns reference features onto the query and adds them residually.
    /// Both inputs are `[B, C, H, W]`; so is the output.
    pub fn forward(&self, g: &mut Graph, f_q: Var, f_ref: Var) -> Var {
        match self {
            Aligner::Cross(a) => cross_attend(g, &a.attn, f_q, f_ref).0,
            Aligner::Flow(a) => flow_align(g, a, f_q, f_ref),
            Aligner::Deform(a) => deform_align(g, a, f_q, f_ref),
        }
    }
}

/// Multi-head attention with one token per spatial location: queries from
/// `f_q`, keys and values from `f_kv`, added back onto `f_q`. Also returns
/// the attention weights `[B, heads, HW, HW]`.
pub fn cross_attend(g: &mut Graph, attn: &MultiHeadAttention, f_q: Var, f_kv: Var) -> (Var, Var) {
    same_shape(g, f_q, f_kv, "cross_attend");
    let s = g.shape(f_q).to_vec();
    let tq = to_tokens(g, f_q);
    let tk = to_tokens(g, f_kv);
    let a = attn.forward(g, tq, tk);
    let o = from_tokens(g, a.out, s[2], s[3]);
    (g.add(f_q, o), a.weights)
}

fn clamp_offsets(g: &mut Graph, o: Var, h: usize, w: usize) -> Var {
    let lim = h.max(w) as f64;
    g.clamp(o, -lim, lim)
}

pub fn flow_offsets(g: &mut Graph, a: &FlowAlign, f_q: Var, f_ref: Var) -> Var {
    let s = g.shape(f_q).to_vec();
    let x = g.concat(&[f_q, f_ref], 1);
    let h = a.hidden.forward(g, x);
    let h = g.silu(h);
    let o = a.out.forward(g, h);
    clamp_offsets(g, o, s[2], s[3])
}

pub fn flow_align(g: &mut Graph, a: &FlowAlign, f_q: Var, f_ref: Var) -> Var {
    same_shape(g, f_q, f_ref, "flow_align");
    let o = flow_offsets(g, a, f_q, f_ref);
    let warped = warp(g, f_ref, o);
    g.add(f_q, warped)
}

/// Deformable 3x3 gather of `f_ref` with explicit per-tap `offsets: [B, 18, H, W]`
/// (channel `2k` is dx of tap `k`, `2k+1` its dy) combined by `weight`/`bias`.
pub fn deform_gather(g: &mut Graph, f_ref: Var, offsets: Var, weight: Var, bias: Var) -> Var {
    let s = g.shape(f_ref).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let o = g.reshape(offsets, &[b, 9, 2, hw]);
    let o = g.permute(o, &[0, 1, 3, 2]);
    let o = g.reshape(o, &[b, 9 * hw, 2]);
    let base = g.constant(grid(h, w, &DEFORM_TAPS));
    let coords = g.add(o, base);
    let sampled = g.bilinear_sample(f_ref, coords);
    // [B, C, 9, HW] -> [B, HW, C*9], matching the [O, C, 3, 3] weight layout.
    let sampled = g.reshape(sampled, &[b, c, 9, hw]);
    let sampled = g.permute(sampled, &[0, 3, 1, 2]);
    let sampled = g.reshape(sampled, &[b, hw, c * 9]);
    let cout = g.shape(weight)[0];
    let wm = g.reshape(weight, &[cout, c * 9]);
    let wm = g.transpose_last(wm);
    let out = g.matmul(sampled, wm);
    let out = g.add(out, bias);
    from_tokens(g, out, h, w)
}

pub fn deform_align(g: &mut Graph, a: &DeformAlign, f_q: Var, f_ref: Var) -> Var {
    same_shape(g, f_q, f_ref, "deform_align");
    let s = g.shape(f_q).to_vec();
    let o = a.offsets.forward(g, f_q);
    let o = clamp_offsets(g, o, s[2], s[3]);
    let (w, b) = (g.param(a.weight), g.param(a.bias));
    let gathered = deform_gather(g, f_ref, o, w, b);
    g.add(f_q, gathered)
}
