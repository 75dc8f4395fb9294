//! Audio-to-expression transformer.
//!
//! Audio, shape and history tokens are embedded separately, concatenated
//! (audio, shape, history), given periodic positional encodings and run
//! through a pre-LN self-attention encoder. A parallel decoder of `T` learned
//! queries cross-attends to that memory and a linear head maps each query to
//! expression coefficients.

use autograd::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::morphable::MorphableModel;
use crate::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct A2EConfig {
    /// Audio tokens per window (`l`).
    pub audio_len: usize,
    /// Historical expression tokens (`N`).
    pub history: usize,
    /// Predicted frames per window (`T`).
    pub frames: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub audio_dim: usize,
    pub shape_dim: usize,
    pub expr_dim: usize,
    pub vertex_loss_weight: f64,
    /// Period of the positional encoding, in video frames.
    pub pe_period: usize,
    pub query_pos_encoding: bool,
    /// When false the shape token is fed a zero vector (ablation).
    pub use_shape: bool,
    /// When false the history tokens are fed zero vectors (ablation).
    pub use_history: bool,
    pub init_seed: u64,
}

impl Default for A2EConfig {
    fn default() -> Self {
        A2EConfig {
            audio_len: 32,
            history: 16,
            frames: 16,
            latent_dim: 64,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 128,
            audio_dim: 16,
            shape_dim: 4,
            expr_dim: 8,
            vertex_loss_weight: 0.1,
            pe_period: 16,
            query_pos_encoding: true,
            use_shape: true,
            use_history: true,
            init_seed: 0,
        }
    }
}

impl A2EConfig {
    /// Full-size transformer: 8 layers, 8 heads, width 256.
    pub fn full_scale() -> Self {
        A2EConfig { latent_dim: 256, heads: 8, enc_layers: 8, dec_layers: 8, ffn_dim: 1024, ..Self::default() }
    }

    pub fn n_tokens(&self) -> usize {
        self.audio_len + self.history + 1
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("audio_len", self.audio_len),
            ("history", self.history),
            ("frames", self.frames),
            ("latent_dim", self.latent_dim),
            ("heads", self.heads),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("ffn_dim", self.ffn_dim),
            ("audio_dim", self.audio_dim),
            ("shape_dim", self.shape_dim),
            ("expr_dim", self.expr_dim),
            ("pe_period", self.pe_period),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("a2e.{name} must be >= 1")));
            }
        }
        if self.latent_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "a2e.latent_dim {} not divisible by a2e.heads {}",
                self.latent_dim, self.heads
            )));
        }
        if !(self.vertex_loss_weight >= 0.0) {
            return Err(Error::Config("a2e.vertex_loss_weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Position of every encoder token in video-frame time. Audio runs at
    /// `audio_len / frames` tokens per frame, so audio token `j` sits at
    /// `j * frames / audio_len`; the shape token sits at 0 and history token
    /// `k` at `k`.
    pub fn token_positions(&self) -> Vec<f64> {
        let rate = self.frames as f64 / self.audio_len as f64;
        let mut p: Vec<f64> = (0..self.audio_len).map(|j| j as f64 * rate).collect();
        p.push(0.0);
        p.extend((0..self.history).map(|k| k as f64));
        p
    }
}

/// Standard sinusoidal encoding evaluated at `pos mod period`: entry `2i` is
/// `sin(p / 10000^(2i/dim))`, entry `2i+1` the matching cosine.
pub fn periodic_encoding(pos: f64, dim: usize, period: usize) -> Vec<f64> {
    let p = pos.rem_euclid(period as f64);
    (0..dim)
        .map(|j| {
            let i = (j / 2) as f64;
            let angle = p / 10000f64.powf(2.0 * i / dim as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn encoding_table(positions: &[f64], dim: usize, period: usize) -> Tensor {
    let data = positions.iter().flat_map(|&p| periodic_encoding(p, dim, period)).collect();
    Tensor::new([positions.len(), dim], data)
}

/// Adds the periodic encoding for `positions` to `tokens: [B, n, D]`.
pub fn add_positional_encoding(g: &mut Graph, tokens: Var, positions: &[f64], period: usize) -> Var {
    let d = *g.shape(tokens).last().unwrap();
    let pe = g.constant(encoding_table(positions, d, period));
    g.add(tokens, pe)
}

/// One window of inputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct A2EInputs {
    /// `[B, l, d_a]`
    pub audio: Tensor,
    /// `[B, d_s]`
    pub shape: Tensor,
    /// `[B, N, d_e]`
    pub history: Tensor,
}

impl A2EInputs {
    pub fn batch(&self) -> usize {
        self.audio.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    pub(crate) ln1: LayerNorm,
    pub(crate) attn: MultiHeadAttention,
    pub(crate) ln2: LayerNorm,
    pub(crate) ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    pub(crate) ln1: LayerNorm,
    pub(crate) self_attn: MultiHeadAttention,
    pub(crate) ln2: LayerNorm,
    pub(crate) cross_attn: MultiHeadAttention,
    pub(crate) ln3: LayerNorm,
    pub(crate) ffn: FeedForward,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct A2EForward {
    /// Embedded tokens before positional encoding, `[B, l+N+1, D]`.
    pub tokens: Var,
    /// Encoder memory `[B, l+N+1, D]`.
    pub memory: Var,
    /// Predicted expressions `[B, T, d_e]`.
    pub pred: Var,
    pub enc_attn: Vec<Var>,
    pub dec_self_attn: Vec<Var>,
    pub dec_cross_attn: Vec<Var>,
}

#[derive(Debug)]
pub struct A2EModel {
    pub cfg: A2EConfig,
    pub params: ParamStore,
    pub(crate) emb_audio: Linear,
    pub(crate) emb_shape: Linear,
    pub(crate) emb_hist: Linear,
    pub(crate) enc: Vec<EncoderLayer>,
    pub(crate) enc_ln: LayerNorm,
    pub(crate) queries: ParamId,
    pub(crate) dec: Vec<DecoderLayer>,
    pub(crate) dec_ln: LayerNorm,
    pub(crate) head: Linear,
}

impl A2EModel {
    pub fn new(cfg: A2EConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.init_seed, 0xa2e);
        let mut p = ParamStore::new();
        let d = cfg.latent_dim;
        let emb_audio = Linear::new(&mut p, "embed.audio", cfg.audio_dim, d, &mut rng);
        let emb_shape = Linear::new(&mut p, "embed.shape", cfg.shape_dim, d, &mut rng);
        let emb_hist = Linear::new(&mut p, "embed.history", cfg.expr_dim, d, &mut rng);
        let enc = (0..cfg.enc_layers)
            .map(|i| {
                let n = format!("enc.{i}");
                EncoderLayer {
                    ln1: LayerNorm::new(&mut p, &format!("{n}.ln1"), d),
                    attn: MultiHeadAttention::new(&mut p, &format!("{n}.attn"), d, cfg.heads, &mut rng),
                    ln2: LayerNorm::new(&mut p, &format!("{n}.ln2"), d),
                    ffn: FeedForward::new(&mut p, &format!("{n}.ffn"), d, cfg.ffn_dim, &mut rng),
                }
            })
            .collect();
        let enc_ln = LayerNorm::new(&mut p, "enc.ln", d);
        let queries = p.add("dec.queries", Tensor::zeros([cfg.frames, d]));
        let dec = (0..cfg.dec_layers)
            .map(|i| {
                let n = format!("dec.{i}");
                DecoderLayer {
                    ln1: LayerNorm::new(&mut p, &format!("{n}.ln1"), d),
                    self_attn: MultiHeadAttention::new(&mut p, &format!("{n}.self"), d, cfg.heads, &mut rng),
                    ln2: LayerNorm::new(&mut p, &format!("{n}.ln2"), d),
                    cross_attn: MultiHeadAttention::new(&mut p, &format!("{n}.cross"), d, cfg.heads, &mut rng),
                    ln3: LayerNorm::new(&mut p, &format!("{n}.ln3"), d),
                    ffn: FeedForward::new(&mut p, &format!("{n}.ffn"), d, cfg.ffn_dim, &mut rng),
                }
            })
            .collect();
        let dec_ln = LayerNorm::new(&mut p, "dec.ln", d);
        let head = Linear::new(&mut p, "head", d, cfg.expr_dim, &mut rng);
        Ok(A2EModel { cfg, params: p, emb_audio, emb_shape, emb_hist, enc, enc_ln, queries, dec, dec_ln, head })
    }

    pub fn check_inputs(&self, x: &A2EInputs) -> Result<()> {
        let c = &self.cfg;
        let b = x.audio.shape().first().copied().unwrap_or(0);
        let want = [
            ("audio", x.audio.shape(), vec![b, c.audio_len, c.audio_dim]),
            ("shape", x.shape.shape(), vec![b, c.shape_dim]),
            ("history", x.history.shape(), vec![b, c.history, c.expr_dim]),
        ];
        for (name, got, want) in want {
            if got != want.as_slice() {
                return Err(Error::DimensionMismatch(format!("a2e {name} input: expected {want:?}, got {got:?}")));
            }
        }
        if b == 0 {
            return Err(Error::DimensionMismatch("a2e batch is empty".into()));
        }
        Ok(())
    }

    /// Per-modality embeddings concatenated as (audio, shape, history).
    pub fn embed_inputs(&self, g: &mut Graph, x: &A2EInputs) -> Result<Var> {
        self.check_inputs(x)?;
        let b = x.batch();
        let audio = g.constant(x.audio.clone());
        let shape = if self.cfg.use_shape { x.shape.clone() } else { Tensor::zeros(x.shape.shape().to_vec()) };
        let shape = g.constant(shape.reshape([b, 1, self.cfg.shape_dim]));
        let hist = if self.cfg.use_history { x.history.clone() } else { Tensor::zeros(x.history.shape().to_vec()) };
        let hist = g.constant(hist);
        let ta = self.emb_audio.forward(g, audio);
        let ts = self.emb_shape.forward(g, shape);
        let th = self.emb_hist.forward(g, hist);
        Ok(g.concat(&[ta, ts, th], 1))
    }

    /// Stacked pre-LN self-attention blocks over all tokens. Returns the
    /// memory and each layer's attention weights.
    pub fn cmsa_encode(&self, g: &mut Graph, tokens: Var) -> (Var, Vec<Var>) {
        let mut x = tokens;
        let mut attn = Vec::with_capacity(self.enc.len());
        for layer in &self.enc {
            let h = layer.ln1.forward(g, x);
            let a = layer.attn.forward(g, h, h);
            attn.push(a.weights);
            x = g.add(x, a.out);
            let h = layer.ln2.forward(g, x);
            let f = layer.ffn.forward(g, h);
            x = g.add(x, f);
        }
        (self.enc_ln.forward(g, x), attn)
    }

    /// Parallel decoding of `T` queries against `memory: [B, n, D]`.
    pub fn tca_decode(&self, g: &mut Graph, memory: Var) -> (Var, Vec<Var>, Vec<Var>) {
        let b = g.shape(memory)[0];
        let (t, d) = (self.cfg.frames, self.cfg.latent_dim);
        let q = g.param(self.queries);
        let q = g.reshape(q, &[1, t, d]);
        let q = if self.cfg.query_pos_encoding {
            let pos: Vec<f64> = (0..t).map(|i| i as f64).collect();
            add_positional_encoding(g, q, &pos, self.cfg.pe_period)
        } else {
            q
        };
        let zeros = g.constant(Tensor::zeros([b, t, d]));
        let mut x = g.add(zeros, q);
        let (mut sa, mut ca) = (Vec::new(), Vec::new());
        for layer in &self.dec {
            let h = layer.ln1.forward(g, x);
            let a = layer.self_attn.forward(g, h, h);
            sa.push(a.weights);
            x = g.add(x, a.out);
            let h = layer.ln2.forward(g, x);
            let a = layer.cross_attn.forward(g, h, memory);
            ca.push(a.weights);
            x = g.add(x, a.out);
            let h = layer.ln3.forward(g, x);
            let f = layer.ffn.forward(g, h);
            x = g.add(x, f);
        }
        let x = self.dec_ln.forward(g, x);
        (self.head.forward(g, x), sa, ca)
    }

    pub fn forward(&self, g: &mut Graph, x: &A2EInputs) -> Result<A2EForward> {
        let tokens = self.embed_inputs(g, x)?;
        let pos = self.cfg.token_positions();
        let encoded = add_positional_encoding(g, tokens, &pos, self.cfg.pe_period);
        let (memory, enc_attn) = self.cmsa_encode(g, encoded);
        let (pred, dec_self_attn, dec_cross_attn) = self.tca_decode(g, memory);
        Ok(A2EForward { tokens, memory, pred, enc_attn, dec_self_attn, dec_cross_attn })
    }

    /// Inference without gradient bookkeeping for the caller: `[B, T, d_e]`.
    pub fn predict(&self, x: &A2EInputs) -> Result<Tensor> {
        let mut g = Graph::new();
        g.attach(&self.params, false);
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out.pred).clone())
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}

fn check_same(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::DimensionMismatch(format!("{what}: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// `(1/T) sum_t |beta_t - pred_t|^2`, averaged over the batch.
/// `pred`, `target`: `[B, T, d_e]`.
pub fn loss_mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    check_same(g, pred, target, "loss_mse")?;
    let s = g.shape(pred);
    let frames = (s[0] * s[1]) as f64;
    let d = g.sub(pred, target);
    let sq = g.square(d);
    let total = g.sum_all(sq);
    Ok(g.mul_scalar(total, 1.0 / frames))
}

/// Mouth-vertex distance between ground-truth and predicted expressions under
/// the same shape and pose, `(1/T) sum_t |V_mouth(beta) - V_mouth(pred)|^2`.
///
/// `shape: [B, T, d_s]`, `pose: [B, T, 6]`.
pub fn loss_vertex(
    g: &mut Graph,
    model: &MorphableModel,
    pred: Var,
    target: Var,
    shape: &Tensor,
    pose: &Tensor,
) -> Result<Var> {
    check_same(g, pred, target, "loss_vertex")?;
    let s = g.shape(pred).to_vec();
    let (b, t, de) = (s[0], s[1], s[2]);
    if de != model.d_e() || shape.shape() != [b, t, model.d_s()] || pose.shape() != [b, t, 6] {
        return Err(Error::DimensionMismatch(format!(
            "loss_vertex: pred {s:?}, shape {:?}, pose {:?} for model d_s={} d_e={}",
            shape.shape(),
            pose.shape(),
            model.d_s(),
            model.d_e()
        )));
    }
    let n = b * t;
    let alpha = g.constant(shape.clone().reshape([n, model.d_s()]));
    let rho = g.constant(pose.clone().reshape([n, 6]));
    let bp = g.reshape(pred, &[n, de]);
    let bt = g.reshape(target, &[n, de]);
    let vp = model.vertices_graph(g, alpha, bp, rho, &model.mouth_indices);
    let vt = model.vertices_graph(g, alpha, bt, rho, &model.mouth_indices);
    let d = g.sub(vt, vp);
    let sq = g.square(d);
    let total = g.sum_all(sq);
    Ok(g.mul_scalar(total, 1.0 / n as f64))
}

pub fn loss_a2e(g: &mut Graph, mse: Var, vtx: Var, weight: f64) -> Var {
    let w = g.mul_scalar(vtx, weight);
    g.add(mse, w)
}

/// Plain-value form of the combined loss.
pub fn combine_a2e(mse: f64, vtx: f64, weight: f64) -> f64 {
    mse + weight * vtx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_positions_cover_one_window() {
        let cfg = A2EConfig::default();
        let p = cfg.token_positions();
        assert_eq!(p.len(), 49);
        assert_eq!(p[1], 0.5);
        assert_eq!(p[31], 15.5);
    }

    #[test]
    fn full_scale_config_is_valid() {
        let cfg = A2EConfig::full_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.latent_dim / cfg.heads, 32);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = A2EConfig { latent_dim: 10, heads: 4, ..Default::default() };
        assert!(matches!(A2EModel::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn combine_uses_weight() {
        assert!((combine_a2e(1.0, 2.0, 0.1) - 1.2).abs() < 1e-15);
    }
}
