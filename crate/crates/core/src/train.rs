//! Training loops for both stages.

use std::fmt;
use std::str::FromStr;

use autograd::{Graph, Tensor};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio2expr::{loss_a2e, loss_mse, loss_vertex, A2EConfig, A2EInputs, A2EModel};
use crate::error::{Error, Result};
use crate::image::MaskImage;
use crate::losses::{
    d_loss_from_logits, g_loss_from_logits, perceptual, pixel_l1, teeth_l1, total_e2f_graph, Discriminator,
    E2FLossWeights, FeatureExtractor, RandomConvFeatures,
};
use crate::mask::{build_mask, build_teeth_mask, lower_half_mask, MaskParams};
use crate::optim::{Adam, AdamConfig};
use crate::renderer::{coeff_row, RenderBatch, Renderer, RendererConfig, IMAGE_CHANNELS};
use crate::seeded_rng;
use crate::synth::{ClipSample, Dataset};

/// Audio feature rows per video frame in generated data.
pub const AUDIO_PER_FRAME: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    A2E,
    E2F,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn a2e_full() -> Self {
        TrainConfig {
            stage: Stage::A2E,
            lr: 5e-5,
            adam_beta1: 0.95,
            adam_beta2: 0.999,
            weight_decay: 0.0,
            batch_size: 512,
            iterations: 200_000,
            seed: 0,
            checkpoint_every: 10_000,
            grad_clip: 1.0,
        }
    }

    pub fn e2f_full() -> Self {
        TrainConfig {
            stage: Stage::E2F,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.96,
            weight_decay: 1e-5,
            batch_size: 80,
            iterations: 100_000,
            seed: 0,
            checkpoint_every: 10_000,
            grad_clip: 1.0,
        }
    }

    pub fn a2e_toy() -> Self {
        TrainConfig { lr: 1e-3, batch_size: 8, iterations: 2000, checkpoint_every: 500, ..Self::a2e_full() }
    }

    pub fn e2f_toy() -> Self {
        TrainConfig { lr: 1e-3, batch_size: 2, iterations: 3000, checkpoint_every: 1000, ..Self::e2f_full() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("learning rate must be positive and Adam betas in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::Config("weight_decay and grad_clip must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
            clip_norm: (self.grad_clip > 0.0).then_some(self.grad_clip),
        }
    }
}

/// Which mask the renderer is trained and evaluated with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Projected, dilated face contour of the frame's coefficients.
    Learnable,
    /// Fixed lower half of the image.
    LowerHalf,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Learnable => "learnable",
            MaskKind::LowerHalf => "lower_half",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnable" => Ok(MaskKind::Learnable),
            "lower_half" => Ok(MaskKind::LowerHalf),
            _ => Err(Error::Config(format!("unknown mask kind `{s}` (expected learnable or lower_half)"))),
        }
    }
}

/// Frames of a clip usable as history for a window `[start, start + len)`:
/// `n` indices from outside the window, sorted. Sampling is without
/// replacement when enough frames exist. If the window covers the clip the
/// whole clip is used.
pub fn sample_history(rng: &mut ChaCha8Rng, n_frames: usize, start: usize, len: usize, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n_frames).filter(|&t| t < start || t >= start + len).collect();
    if pool.is_empty() {
        pool = (0..n_frames).collect();
    }
    let mut out: Vec<usize> = if pool.len() >= n {
        sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    };
    out.sort_unstable();
    out
}

/// A batch of stage-1 windows with everything needed for both loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub inputs: A2EInputs,
    /// `[B, T, d_e]`
    pub target: Tensor,
    /// Shape coefficients repeated per frame, `[B, T, d_s]`.
    pub shape_seq: Tensor,
    /// `[B, T, 6]`
    pub pose: Tensor,
    /// `(clip index, first frame)` of each window.
    pub spans: Vec<(usize, usize)>,
}

impl WindowBatch {
    /// Windows starting at `spans`, with history drawn from `rng`.
    pub fn build(data: &Dataset, cfg: &A2EConfig, spans: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Result<Self> {
        let (l, t, n) = (cfg.audio_len, cfg.frames, cfg.history);
        let (da, ds, de) = (cfg.audio_dim, cfg.shape_dim, cfg.expr_dim);
        let b = spans.len();
        let mut audio = Vec::with_capacity(b * l * da);
        let mut shape = Vec::with_capacity(b * ds);
        let mut hist = Vec::with_capacity(b * n * de);
        let mut target = Vec::with_capacity(b * t * de);
        let mut shape_seq = Vec::with_capacity(b * t * ds);
        let mut pose = Vec::with_capacity(b * t * 6);
        for &(c, s) in spans {
            let clip = data
                .clips
                .get(c)
                .ok_or_else(|| Error::InvalidArgument(format!("clip {c} out of range")))?;
            let tr = &clip.track;
            let nf = tr.frames();
            if s + t > nf {
                return Err(Error::InvalidArgument(format!("window {s}+{t} beyond clip of {nf} frames")));
            }
            let a0 = AUDIO_PER_FRAME * s;
            audio.extend_from_slice(&clip.audio.data()[a0 * da..(a0 + l) * da]);
            shape.extend_from_slice(&tr.shape);
            for h in sample_history(rng, nf, s, t, n) {
                hist.extend_from_slice(tr.expr_row(h));
            }
            for f in s..s + t {
                target.extend_from_slice(tr.expr_row(f));
                shape_seq.extend_from_slice(&tr.shape);
                pose.extend_from_slice(&tr.pose_row(f));
            }
        }
        Ok(WindowBatch {
            inputs: A2EInputs {
                audio: Tensor::new([b, l, da], audio),
                shape: Tensor::new([b, ds], shape),
                history: Tensor::new([b, n, de], hist),
            },
            target: Tensor::new([b, t, de], target),
            shape_seq: Tensor::new([b, t, ds], shape_seq),
            pose: Tensor::new([b, t, 6], pose),
            spans: spans.to_vec(),
        })
    }
}

/// Checks that stage-1 settings fit the dataset.
pub fn check_a2e_data(data: &Dataset, cfg: &A2EConfig) -> Result<()> {
    let d = &data.cfg;
    if (d.audio_dim, d.shape_dim, d.expr_dim) != (cfg.audio_dim, cfg.shape_dim, cfg.expr_dim) {
        return Err(Error::Config(format!(
            "dataset dims (audio {}, shape {}, expr {}) do not match model (audio {}, shape {}, expr {})",
            d.audio_dim, d.shape_dim, d.expr_dim, cfg.audio_dim, cfg.shape_dim, cfg.expr_dim
        )));
    }
    if cfg.audio_len != AUDIO_PER_FRAME * cfg.frames {
        return Err(Error::Config(format!(
            "a2e.audio_len {} must be {AUDIO_PER_FRAME} x a2e.frames {}",
            cfg.audio_len, cfg.frames
        )));
    }
    if data.clips.is_empty() {
        return Err(Error::Config("dataset has no clips".into()));
    }
    if let Some(c) = data.clips.iter().find(|c| c.n_frames() < cfg.frames) {
        return Err(Error::Config(format!(
            "clip with {} frames is shorter than the {}-frame window",
            c.n_frames(),
            cfg.frames
        )));
    }
    Ok(())
}

/// Random window sampler for stage-1 training.
pub struct A2ESampler<'a> {
    data: &'a Dataset,
    cfg: A2EConfig,
    batch: usize,
    rng: ChaCha8Rng,
}

impl<'a> A2ESampler<'a> {
    pub fn new(data: &'a Dataset, cfg: &A2EConfig, batch: usize, seed: u64) -> Result<Self> {
        check_a2e_data(data, cfg)?;
        Ok(A2ESampler { data, cfg: cfg.clone(), batch, rng: seeded_rng(seed, 0x5a1) })
    }

    pub fn next_batch(&mut self) -> Result<WindowBatch> {
        let t = self.cfg.frames;
        let spans: Vec<(usize, usize)> = (0..self.batch)
            .map(|_| {
                let c = self.rng.random_range(0..self.data.clips.len());
                let s = self.rng.random_range(0..=self.data.clips[c].n_frames() - t);
                (c, s)
            })
            .collect();
        WindowBatch::build(self.data, &self.cfg, &spans, &mut self.rng)
    }
}

/// Loss terms of one stage-1 batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct A2ELoss {
    pub mse: f64,
    pub vertex: f64,
    pub total: f64,
}

/// Stage-1 losses of `model` on `batch`, without updating anything.
pub fn a2e_batch_loss(model: &A2EModel, data: &Dataset, batch: &WindowBatch) -> Result<A2ELoss> {
    let mut g = Graph::new();
    g.attach(&model.params, false);
    let (mse, vtx, total) = a2e_loss_graph(&mut g, model, data, batch)?;
    Ok(A2ELoss { mse: g.value(mse).item(), vertex: g.value(vtx).item(), total: g.value(total).item() })
}

fn a2e_loss_graph(
    g: &mut Graph,
    model: &A2EModel,
    data: &Dataset,
    batch: &WindowBatch,
) -> Result<(autograd::Var, autograd::Var, autograd::Var)> {
    let out = model.forward(g, &batch.inputs)?;
    let target = g.constant(batch.target.clone());
    let mse = loss_mse(g, out.pred, target)?;
    let vtx = loss_vertex(g, &data.model, out.pred, target, &batch.shape_seq, &batch.pose)?;
    let total = loss_a2e(g, mse, vtx, model.cfg.vertex_loss_weight);
    Ok((mse, vtx, total))
}

/// One loss-curve row per optimizer step, measured before that step's update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl LossCurve {
    pub fn new(columns: &[&str]) -> Self {
        LossCurve { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, step: usize, values: Vec<f64>) {
        self.rows.push((step, values));
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("step,{}\n", self.columns.join(","));
        for (step, v) in &self.rows {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            s.push_str(&format!("{step},{}\n", vals.join(",")));
        }
        s
    }
}

/// Trains a freshly initialized transformer. `on_step(step, model)` runs after
/// every update with the 1-based step count.
pub fn train_a2e(
    data: &Dataset,
    cfg: &A2EConfig,
    tc: &TrainConfig,
    on_step: &mut dyn FnMut(usize, &A2EModel) -> Result<()>,
) -> Result<(A2EModel, LossCurve)> {
    tc.validate()?;
    let mut model = A2EModel::new(cfg.clone())?;
    let mut sampler = A2ESampler::new(data, cfg, tc.batch_size, tc.seed)?;
    let mut opt = Adam::new(tc.adam());
    let mut curve = LossCurve::new(&["mse", "vertex", "total"]);
    for step in 0..tc.iterations {
        let batch = sampler.next_batch()?;
        let grads = {
            let mut g = Graph::new();
            g.attach(&model.params, true);
            let (mse, vtx, total) = a2e_loss_graph(&mut g, &model, data, &batch)?;
            let vals = vec![g.value(mse).item(), g.value(vtx).item(), g.value(total).item()];
            if !vals[2].is_finite() {
                return Err(Error::InvalidArgument(format!("a2e loss became non-finite at step {step}")));
            }
            curve.push(step, vals);
            g.backward(total)
        };
        opt.step(&mut model.params, &grads.params());
        if step % 100 == 0 {
            log::info!("a2e step {step}: total {:.6}", curve.rows.last().unwrap().1[2]);
        }
        on_step(step + 1, &model)?;
    }
    Ok((model, curve))
}

/// Mask and teeth mask of every frame of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipMasks {
    pub masks: Vec<MaskImage>,
    pub teeth: Vec<MaskImage>,
}

/// Options shared by mask construction in training, evaluation and inference.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSettings {
    pub kind: MaskKind,
    pub params: MaskParams,
}

impl MaskSettings {
    pub fn new(kind: MaskKind, data: &Dataset, dilation: f64) -> Self {
        let c = &data.cfg;
        MaskSettings { kind, params: MaskParams { dilation, ..MaskParams::new(c.focal_scale(), c.height, c.width) } }
    }

    /// Mask and teeth mask for one frame's coefficients. The teeth mask is
    /// restricted to the region the mask regenerates.
    pub fn frame_masks(&self, model: &crate::morphable::MorphableModel, c: &crate::morphable::Coeff3D) -> Result<(MaskImage, MaskImage)> {
        let p = &self.params;
        let mask = match self.kind {
            MaskKind::Learnable => build_mask(model, c, p)?.mask,
            MaskKind::LowerHalf => lower_half_mask(p.height, p.width),
        };
        let mut teeth = build_teeth_mask(model, c, p)?.mask;
        for (t, m) in teeth.data.iter_mut().zip(&mask.data) {
            *t &= u8::from(*m == 0);
        }
        Ok((mask, teeth))
    }

    pub fn clip_masks(&self, model: &crate::morphable::MorphableModel, clip: &ClipSample) -> Result<ClipMasks> {
        let mut masks = Vec::with_capacity(clip.n_frames());
        let mut teeth = Vec::with_capacity(clip.n_frames());
        for t in 0..clip.n_frames() {
            let (m, th) = self.frame_masks(model, &clip.track.coeff(t))?;
            masks.push(m);
            teeth.push(th);
        }
        Ok(ClipMasks { masks, teeth })
    }
}

/// One stage-2 batch: the render inputs plus the teeth masks `[B, 1, H, W]`.
/// The target is `render.source`.
#[derive(Clone, Debug, PartialEq)]
pub struct E2FBatch {
    pub render: RenderBatch,
    pub teeth: Tensor,
    /// `(clip, frame, reference frame)` of each item.
    pub items: Vec<(usize, usize, usize)>,
}

/// Assembles a stage-2 batch with ground-truth coefficients.
pub fn build_e2f_batch(data: &Dataset, masks: &[ClipMasks], items: &[(usize, usize, usize)]) -> Result<E2FBatch> {
    let (h, w) = (data.cfg.height, data.cfg.width);
    let b = items.len();
    let n = IMAGE_CHANNELS * h * w;
    let mut src = Vec::with_capacity(b * n);
    let mut rf = Vec::with_capacity(b * n);
    let mut m = Vec::with_capacity(b * h * w);
    let mut te = Vec::with_capacity(b * h * w);
    let mut co = Vec::new();
    for &(c, t, r) in items {
        let clip = data.clips.get(c).ok_or_else(|| Error::InvalidArgument(format!("clip {c} out of range")))?;
        if t >= clip.n_frames() || r >= clip.n_frames() {
            return Err(Error::InvalidArgument(format!("frame {t} or {r} beyond clip {c}")));
        }
        src.extend_from_slice(clip.frame(t).tensor().data());
        rf.extend_from_slice(clip.frame(r).tensor().data());
        m.extend_from_slice(masks[c].masks[t].to_tensor().data());
        te.extend_from_slice(masks[c].teeth[t].to_tensor().data());
        co.extend(coeff_row(&clip.track.shape, clip.track.expr_row(t), &clip.track.pose_row(t)));
    }
    let cd = co.len() / b.max(1);
    Ok(E2FBatch {
        render: RenderBatch {
            source: Tensor::new([b, IMAGE_CHANNELS, h, w], src),
            reference: Tensor::new([b, IMAGE_CHANNELS, h, w], rf),
            mask: Tensor::new([b, 1, h, w], m),
            coeffs: Tensor::new([b, cd], co),
        },
        teeth: Tensor::new([b, 1, h, w], te),
        items: items.to_vec(),
    })
}

pub fn check_e2f_data(data: &Dataset, cfg: &RendererConfig) -> Result<()> {
    let d = &data.cfg;
    if (d.height, d.width, d.shape_dim, d.expr_dim) != (cfg.height, cfg.width, cfg.shape_dim, cfg.expr_dim) {
        return Err(Error::Config(format!(
            "dataset ({}x{}, shape {}, expr {}) does not match renderer ({}x{}, shape {}, expr {})",
            d.height, d.width, d.shape_dim, d.expr_dim, cfg.height, cfg.width, cfg.shape_dim, cfg.expr_dim
        )));
    }
    if data.clips.is_empty() {
        return Err(Error::Config("dataset has no clips".into()));
    }
    Ok(())
}

/// Settings of a stage-2 run beyond the renderer and optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct E2FSetup {
    pub mask: MaskKind,
    pub dilation: f64,
    pub loss: E2FLossWeights,
    pub disc_channels: usize,
}

impl Default for E2FSetup {
    fn default() -> Self {
        E2FSetup {
            mask: MaskKind::Learnable,
            dilation: crate::mask::DEFAULT_DILATION,
            loss: E2FLossWeights::default(),
            disc_channels: 16,
        }
    }
}

/// Result of a stage-2 run.
#[derive(Debug)]
pub struct E2FTrained {
    pub renderer: Renderer,
    pub discriminator: Discriminator,
    pub curve: LossCurve,
}

/// Trains a freshly initialized renderer with alternating generator and
/// discriminator updates. The discriminator is only updated when the
/// adversarial weight is positive.
pub fn train_e2f(
    data: &Dataset,
    cfg: &RendererConfig,
    tc: &TrainConfig,
    setup: &E2FSetup,
    on_step: &mut dyn FnMut(usize, &Renderer, &Discriminator) -> Result<()>,
) -> Result<E2FTrained> {
    tc.validate()?;
    setup.loss.validate()?;
    check_e2f_data(data, cfg)?;
    let mut renderer = Renderer::new(cfg.clone())?;
    let mut disc = Discriminator::new(tc.seed, IMAGE_CHANNELS, setup.disc_channels.max(1));
    let feat = RandomConvFeatures::new(tc.seed, IMAGE_CHANNELS);
    let settings = MaskSettings::new(setup.mask, data, setup.dilation);
    let masks: Vec<ClipMasks> =
        data.clips.iter().map(|c| settings.clip_masks(&data.model, c)).collect::<Result<_>>()?;
    let mut rng = seeded_rng(tc.seed, 0x5a2);
    let mut g_opt = Adam::new(tc.adam());
    let mut d_opt = Adam::new(tc.adam());
    let w = setup.loss;
    let use_d = w.adversarial > 0.0;
    let mut curve = LossCurve::new(&["pixel", "perceptual", "adversarial", "teeth", "total", "d_loss"]);
    for step in 0..tc.iterations {
        let items: Vec<(usize, usize, usize)> = (0..tc.batch_size)
            .map(|_| {
                let c = rng.random_range(0..data.clips.len());
                let n = data.clips[c].n_frames();
                (c, rng.random_range(0..n), rng.random_range(0..n))
            })
            .collect();
        let batch = build_e2f_batch(data, &masks, &items)?;
        let (grads, fake, mut row) = {
            let mut g = Graph::new();
            g.attach(&renderer.params, true);
            g.attach(feat.store(), false);
            g.attach(&disc.params, false);
            let v = batch.render.to_graph(&mut g);
            let out = renderer.render(&mut g, v.masked, v.reference, v.source, v.mask, v.coeffs)?;
            let pix = pixel_l1(&mut g, out.frame, v.source)?;
            let per = perceptual(&mut g, &feat, out.frame, v.source)?;
            let adv = if use_d {
                let l = disc.logits(&mut g, out.frame);
                Some(g_loss_from_logits(&mut g, l))
            } else {
                None
            };
            let th = teeth_l1(&mut g, out.frame, v.source, &batch.teeth)?;
            let total = total_e2f_graph(&mut g, [Some(pix), Some(per), adv, Some(th)], &w);
            let row = vec![
                g.value(pix).item(),
                g.value(per).item(),
                adv.map_or(0.0, |a| g.value(a).item()),
                g.value(th).item(),
                g.value(total).item(),
                0.0,
            ];
            if !row[4].is_finite() {
                return Err(Error::InvalidArgument(format!("e2f loss became non-finite at step {step}")));
            }
            (g.backward(total), g.value(out.frame).clone(), row)
        };
        g_opt.step(&mut renderer.params, &grads.params());
        if use_d {
            let grads = {
                let mut g = Graph::new();
                g.attach(&disc.params, true);
                let real = g.constant(batch.render.source.clone());
                let fake = g.constant(fake);
                let lr = disc.logits(&mut g, real);
                let lf = disc.logits(&mut g, fake);
                let d_loss = d_loss_from_logits(&mut g, lr, lf);
                row[5] = g.value(d_loss).item();
                g.backward(d_loss)
            };
            d_opt.step(&mut disc.params, &grads.params());
        }
        if step % 100 == 0 {
            log::info!("e2f step {step}: total {:.6}", row[4]);
        }
        curve.push(step, row);
        on_step(step + 1, &renderer, &disc)?;
    }
    Ok(E2FTrained { renderer, discriminator: disc, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_avoids_window() {
        let mut rng = seeded_rng(1, 0);
        for s in 0..20 {
            let h = sample_history(&mut rng, 40, s, 16, 16);
            assert_eq!(h.len(), 16);
            assert!(h.iter().all(|&t| t < s || t >= s + 16));
            assert!(h.windows(2).all(|w| w[0] < w[1]));
        }
        // Too few frames outside: repeats are allowed but the window is still excluded.
        let h = sample_history(&mut rng, 20, 2, 16, 16);
        assert!(h.iter().all(|&t| t < 2 || t >= 18));
    }

    #[test]
    fn mask_kind_parses() {
        assert_eq!("lower_half".parse::<MaskKind>().unwrap(), MaskKind::LowerHalf);
        assert_eq!(MaskKind::Learnable.to_string().parse::<MaskKind>().unwrap(), MaskKind::Learnable);
        assert!("half".parse::<MaskKind>().is_err());
    }

    #[test]
    fn full_presets_carry_optimizer_settings() {
        let a = TrainConfig::a2e_full();
        assert_eq!((a.lr, a.adam_beta1, a.adam_beta2), (5e-5, 0.95, 0.999));
        let e = TrainConfig::e2f_full();
        assert_eq!((e.lr, e.adam_beta1, e.adam_beta2, e.weight_decay), (1e-4, 0.9, 0.96, 1e-5));
    }
}
