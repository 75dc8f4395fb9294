//! Expression-to-face renderer.
//!
//! A shared encoder turns the masked source and the reference frame into
//! feature pyramids (both images go through the same weights in one batch).
//! Decoder stage `i` starts from the previous stage's features at
//! `H / 2^(d-i)`, optionally aligns reference features `F^r_(d-i)` of the same
//! size onto them, then upsamples, applies AdaIN conditioning from the frame
//! coefficients and runs residual blocks. A sigmoid head produces the
//! generated frame, which is blended with the source outside the mask.

use autograd::{Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::baselines::{cross_attend, Aligner, AlignmentKind};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear};
use crate::seeded_rng;

pub const ADAIN_EPS: f64 = 1e-5;
pub const IMAGE_CHANNELS: usize = 3;
/// Pose entries in the conditioning vector: 3 angles + 3D translation.
pub const POSE_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct RendererConfig {
    /// Encoder and decoder stages (`d`).
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub base_channels: usize,
    /// Decoder stages (0-based) that align reference features.
    pub attention_stages: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub adain_mlp_layers: usize,
    pub adain_hidden: usize,
    pub attn_heads: usize,
    pub alignment: AlignmentKind,
    pub shape_dim: usize,
    pub expr_dim: usize,
    pub init_seed: u64,
}

impl Default for RendererConfig {
    fn default() -> Self {
        RendererConfig {
            stages: 4,
            blocks_per_stage: 2,
            base_channels: 16,
            attention_stages: vec![0, 1],
            height: 64,
            width: 64,
            adain_mlp_layers: 3,
            adain_hidden: 64,
            attn_heads: 4,
            alignment: AlignmentKind::FiaCrossAttention,
            shape_dim: 4,
            expr_dim: 8,
            init_seed: 0,
        }
    }
}

impl RendererConfig {
    /// Channels of encoder level `i` (1-based); level 0 is the stem.
    pub fn level_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.base_channels
        } else {
            (self.base_channels << (i - 1).min(20)).min(8 * self.base_channels)
        }
    }

    pub fn coeff_dim(&self) -> usize {
        self.shape_dim + self.expr_dim + POSE_DIM
    }

    /// Spatial size of the features entering decoder stage `i`.
    pub fn stage_input_size(&self, i: usize) -> (usize, usize) {
        let f = 1 << (self.stages - i);
        (self.height / f, self.width / f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 || self.stages > 10 {
            return Err(Error::Config(format!("renderer.stages must be in [2, 10], got {}", self.stages)));
        }
        let f = 1usize << self.stages;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be divisible by 2^stages = {f}",
                self.height, self.width
            )));
        }
        if self.base_channels == 0 || self.adain_hidden == 0 || self.attn_heads == 0 {
            return Err(Error::Config("renderer widths and heads must be positive".into()));
        }
        if self.adain_mlp_layers == 0 {
            return Err(Error::Config("renderer.adain_mlp_layers must be >= 1".into()));
        }
        if let Some(&s) = self.attention_stages.iter().find(|&&s| s >= self.stages) {
            return Err(Error::Config(format!("attention stage {s} outside [0, {})", self.stages)));
        }
        if self.alignment == AlignmentKind::FiaCrossAttention {
            for &s in &self.attention_stages {
                let c = self.level_channels(self.stages - s);
                if c % self.attn_heads != 0 {
                    return Err(Error::Config(format!("stage {s} width {c} not divisible by {} heads", self.attn_heads)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Self {
        ResBlock {
            c1: Conv2d::new(store, &format!("{name}.c1"), c, c, 3, 1, rng),
            c2: Conv2d::new(store, &format!("{name}.c2"), c, c, 3, 1, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = g.silu(x);
        let h = self.c1.forward(g, h);
        let h = g.silu(h);
        let h = self.c2.forward(g, h);
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    down: Conv2d,
    blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    align: Option<Aligner>,
    up: Conv2d,
    /// Style vector -> (scale offset, bias) per output channel.
    adain: Linear,
    blocks: Vec<ResBlock>,
}

/// One frame's features at every encoder level, finest first: `F_1 .. F_d`.
pub type FeaturePyramid = Vec<Var>;

#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// Blended frame `[B, 3, H, W]`.
    pub frame: Var,
    /// Raw generator output before blending.
    pub generated: Var,
}

#[derive(Debug)]
pub struct Renderer {
    pub cfg: RendererConfig,
    pub params: ParamStore,
    stem: Conv2d,
    enc: Vec<EncoderStage>,
    style: Vec<Linear>,
    dec: Vec<DecoderStage>,
    head: Conv2d,
}

impl Renderer {
    pub fn new(cfg: RendererConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.init_seed, 0xe2f);
        let mut p = ParamStore::new();
        let d = cfg.stages;
        let stem = Conv2d::new(&mut p, "enc.stem", IMAGE_CHANNELS, cfg.level_channels(0), 3, 1, &mut rng);
        let enc = (1..=d)
            .map(|i| {
                let (ci, co) = (cfg.level_channels(i - 1), cfg.level_channels(i));
                EncoderStage {
                    down: Conv2d::new(&mut p, &format!("enc.{i}.down"), ci, co, 3, 2, &mut rng),
                    blocks: (0..cfg.blocks_per_stage)
                        .map(|j| ResBlock::new(&mut p, &format!("enc.{i}.res{j}"), co, &mut rng))
                        .collect(),
                }
            })
            .collect();
        let mut style = Vec::new();
        let mut width = cfg.coeff_dim();
        for l in 0..cfg.adain_mlp_layers {
            style.push(Linear::new(&mut p, &format!("style.{l}"), width, cfg.adain_hidden, &mut rng));
            width = cfg.adain_hidden;
        }
        let dec = (0..d)
            .map(|i| {
                let (ci, co) = (cfg.level_channels(d - i), cfg.level_channels(d - i - 1));
                let align = cfg
                    .attention_stages
                    .contains(&i)
                    .then(|| Aligner::new(cfg.alignment, &mut p, &format!("dec.{i}.align"), ci, cfg.attn_heads, &mut rng));
                let adain = Linear::new(&mut p, &format!("dec.{i}.adain"), cfg.adain_hidden, 2 * co, &mut rng);
                let w = p.get_mut(adain.w);
                *w = w.map(|v| 0.1 * v);
                DecoderStage {
                    align,
                    up: Conv2d::new(&mut p, &format!("dec.{i}.up"), ci, co, 3, 1, &mut rng),
                    adain,
                    blocks: (0..cfg.blocks_per_stage)
                        .map(|j| ResBlock::new(&mut p, &format!("dec.{i}.res{j}"), co, &mut rng))
                        .collect(),
                }
            })
            .collect();
        let head = Conv2d::new(&mut p, "head", cfg.level_channels(0), IMAGE_CHANNELS, 3, 1, &mut rng);
        Ok(Renderer { cfg, params: p, stem, enc, style, dec, head })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_image(&self, g: &Graph, x: Var, channels: usize, what: &str) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != channels || s[2] != self.cfg.height || s[3] != self.cfg.width {
            return Err(Error::DimensionMismatch(format!(
                "{what}: expected [B, {channels}, {}, {}], got {s:?}",
                self.cfg.height, self.cfg.width
            )));
        }
        Ok(())
    }

    /// Encodes one batch of images `[B, 3, H, W]`.
    pub fn encode(&self, g: &mut Graph, x: Var) -> FeaturePyramid {
        let mut h = self.stem.forward(g, x);
        let mut levels = Vec::with_capacity(self.enc.len());
        for stage in &self.enc {
            h = stage.down.forward(g, h);
            h = g.silu(h);
            for b in &stage.blocks {
                h = b.forward(g, h);
            }
            levels.push(h);
        }
        levels
    }

    /// Encodes source and reference with the same weights in one batch and
    /// splits the result.
    pub fn shared_encode(&self, g: &mut Graph, source: Var, reference: Var) -> Result<(FeaturePyramid, FeaturePyramid)> {
        self.check_image(g, source, IMAGE_CHANNELS, "masked source")?;
        self.check_image(g, reference, IMAGE_CHANNELS, "reference")?;
        let b = g.shape(source)[0];
        if g.shape(reference)[0] != b {
            return Err(Error::DimensionMismatch("source and reference batch sizes differ".into()));
        }
        let both = g.concat(&[source, reference], 0);
        let levels = self.encode(g, both);
        let mut src = Vec::with_capacity(levels.len());
        let mut rf = Vec::with_capacity(levels.len());
        for l in levels {
            src.push(g.narrow(l, 0, 0, b));
            rf.push(g.narrow(l, 0, b, b));
        }
        Ok((src, rf))
    }

    /// Style vector from `coeffs: [B, d_s + d_e + 6]`.
    pub fn style(&self, g: &mut Graph, coeffs: Var) -> Var {
        let mut h = coeffs;
        for (i, l) in self.style.iter().enumerate() {
            h = l.forward(g, h);
            if i + 1 < self.style.len() {
                h = g.silu(h);
            }
        }
        h
    }

    /// One decoder stage.
    pub fn fia_block(&self, g: &mut Graph, stage: usize, f_prev: Var, f_ref: Var, style: Var) -> Var {
        let st = &self.dec[stage];
        let mut h = f_prev;
        if let Some(a) = &st.align {
            h = a.forward(g, h, f_ref);
        }
        h = g.upsample2x(h);
        h = st.up.forward(g, h);
        let co = g.shape(h)[1];
        let ab = st.adain.forward(g, style);
        let s = g.narrow(ab, 1, 0, co);
        let scale = g.add_scalar(s, 1.0);
        let bias = g.narrow(ab, 1, co, co);
        h = adain_inject(g, h, scale, bias);
        for b in &st.blocks {
            h = b.forward(g, h);
        }
        h
    }

    /// Full render. `mask: [B, 1, H, W]` (1 keeps `source`), `source` is the
    /// unmasked frame used for the blend.
    pub fn render(
        &self,
        g: &mut Graph,
        masked_source: Var,
        reference: Var,
        source: Var,
        mask: Var,
        coeffs: Var,
    ) -> Result<RenderOutput> {
        self.check_image(g, source, IMAGE_CHANNELS, "source")?;
        self.check_image(g, mask, 1, "mask")?;
        let b = g.shape(source)[0];
        if g.shape(coeffs) != [b, self.cfg.coeff_dim()] {
            return Err(Error::DimensionMismatch(format!(
                "coefficients: expected [{b}, {}], got {:?}",
                self.cfg.coeff_dim(),
                g.shape(coeffs)
            )));
        }
        let (src, rf) = self.shared_encode(g, masked_source, reference)?;
        let style = self.style(g, coeffs);
        let d = self.cfg.stages;
        let mut h = src[d - 1];
        for i in 0..d {
            h = self.fia_block(g, i, h, rf[d - 1 - i], style);
        }
        let h = g.silu(h);
        let out = self.head.forward(g, h);
        let generated = g.sigmoid(out);
        let frame = blend(g, mask, source, generated);
        Ok(RenderOutput { frame, generated })
    }

    /// Cross-attention weights of an FIA stage, for inspection. `None` when the
    /// stage has no cross-attention.
    pub fn stage_attention(&self, g: &mut Graph, stage: usize, f_q: Var, f_ref: Var) -> Option<(Var, Var)> {
        match &self.dec.get(stage)?.align {
            Some(Aligner::Cross(c)) => Some(cross_attend(g, &c.attn, f_q, f_ref)),
            _ => None,
        }
    }

    /// Runs a render without recording gradients for the parameters.
    pub fn render_frames(&self, inputs: &RenderBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        g.attach(&self.params, false);
        let v = inputs.to_graph(&mut g);
        let out = self.render(&mut g, v.masked, v.reference, v.source, v.mask, v.coeffs)?;
        Ok(g.value(out.frame).clone())
    }
}

/// Tensor inputs for one render batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBatch {
    /// `[B, 3, H, W]` source frames.
    pub source: Tensor,
    /// `[B, 3, H, W]` reference frames.
    pub reference: Tensor,
    /// `[B, 1, H, W]` masks.
    pub mask: Tensor,
    /// `[B, d_s + d_e + 6]`
    pub coeffs: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct RenderVars {
    pub masked: Var,
    pub reference: Var,
    pub source: Var,
    pub mask: Var,
    pub coeffs: Var,
}

impl RenderBatch {
    pub fn masked_source(&self) -> Tensor {
        let s = self.source.shape().to_vec();
        let hw = s[2] * s[3];
        let mut out = self.source.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let (b, p) = (i / (s[1] * hw), i % hw);
            *v *= self.mask.data()[b * hw + p];
        }
        out
    }

    pub fn to_graph(&self, g: &mut Graph) -> RenderVars {
        RenderVars {
            masked: g.constant(self.masked_source()),
            reference: g.constant(self.reference.clone()),
            source: g.constant(self.source.clone()),
            mask: g.constant(self.mask.clone()),
            coeffs: g.constant(self.coeffs.clone()),
        }
    }
}

/// `scale * (F - mean) / (std + eps) + bias` per channel with spatial
/// statistics. `f: [B, C, H, W]`, `scale`, `bias`: `[B, C]`.
pub fn adain_inject(g: &mut Graph, f: Var, scale: Var, bias: Var) -> Var {
    let s = g.shape(f).to_vec();
    let (b, c) = (s[0], s[1]);
    let flat = g.reshape(f, &[b, c, s[2] * s[3]]);
    let n = g.std_norm_last(flat, ADAIN_EPS);
    let sc = g.reshape(scale, &[b, c, 1]);
    let bi = g.reshape(bias, &[b, c, 1]);
    let y = g.mul(n, sc);
    let y = g.add(y, bi);
    g.reshape(y, &s)
}

/// `M * I_s + (1 - M) * F`; `mask` broadcasts over channels.
pub fn blend(g: &mut Graph, mask: Var, source: Var, generated: Var) -> Var {
    let keep = g.mul(mask, source);
    let neg = g.neg(mask);
    let inv = g.add_scalar(neg, 1.0);
    let gen = g.mul(inv, generated);
    g.add(keep, gen)
}

/// Plain-tensor blend with the same arithmetic as [`blend`].
pub fn blend_tensors(mask: &Tensor, source: &Tensor, generated: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    if source.shape() != generated.shape() {
        return Err(Error::DimensionMismatch(format!("blend {:?} vs {:?}", source.shape(), generated.shape())));
    }
    let (m, s, f) = (g.constant(mask.clone()), g.constant(source.clone()), g.constant(generated.clone()));
    let o = blend(&mut g, m, s, f);
    Ok(g.value(o).clone())
}

/// Conditioning row `[alpha, beta, pose]` for one frame.
pub fn coeff_row(shape: &[f64], expr: &[f64], pose: &[f64; 6]) -> Vec<f64> {
    shape.iter().chain(expr).chain(pose).copied().collect()
}
