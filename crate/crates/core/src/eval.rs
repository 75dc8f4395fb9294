//! Evaluation metrics and end-to-end inference.

use autograd::{Graph, Tensor};

use crate::audio2expr::{loss_vertex, A2EConfig, A2EInputs, A2EModel};
use crate::error::{Error, Result};
use crate::image::{FrameTensor, MaskImage};
use crate::morphable::{project, Coeff3D, MorphableModel};
use crate::renderer::{coeff_row, RenderBatch, Renderer, IMAGE_CHANNELS};
use crate::seeded_rng;
use crate::synth::{ClipSample, Dataset};
use crate::train::{check_a2e_data, sample_history, MaskKind, MaskSettings, WindowBatch, AUDIO_PER_FRAME};

/// Anything that maps a batch of windows to expressions `[B, T, d_e]`.
pub trait ExprPredictor {
    fn predict_windows(&self, batch: &WindowBatch) -> Result<Tensor>;
}

impl ExprPredictor for A2EModel {
    fn predict_windows(&self, batch: &WindowBatch) -> Result<Tensor> {
        self.predict(&batch.inputs)
    }
}

/// Always predicts zeros.
pub struct ZeroPredictor;

impl ExprPredictor for ZeroPredictor {
    fn predict_windows(&self, batch: &WindowBatch) -> Result<Tensor> {
        Ok(Tensor::zeros(batch.target.shape().to_vec()))
    }
}

/// Returns the ground truth.
pub struct OraclePredictor;

impl ExprPredictor for OraclePredictor {
    fn predict_windows(&self, batch: &WindowBatch) -> Result<Tensor> {
        Ok(batch.target.clone())
    }
}

/// Non-overlapping evaluation windows of every clip, with history drawn from
/// a fixed stream per clip.
pub fn eval_windows(data: &Dataset, cfg: &A2EConfig, seed: u64) -> Result<Vec<WindowBatch>> {
    check_a2e_data(data, cfg)?;
    let t = cfg.frames;
    data.clips
        .iter()
        .enumerate()
        .map(|(c, clip)| {
            let spans: Vec<(usize, usize)> = (0..clip.n_frames() / t).map(|w| (c, w * t)).collect();
            let mut rng = seeded_rng(seed, 0xe7a1 + c as u64);
            WindowBatch::build(data, cfg, &spans, &mut rng)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct A2EMetrics {
    /// Mean over frames of the squared expression error norm.
    pub expression_error: f64,
    /// Mean over frames of the squared mouth-vertex error.
    pub mouth_vertex_error: f64,
    pub frames: usize,
}

pub fn evaluate_a2e(pred: &dyn ExprPredictor, data: &Dataset, cfg: &A2EConfig, seed: u64) -> Result<A2EMetrics> {
    let mut sq = 0.0;
    let mut vtx = 0.0;
    let mut frames = 0;
    for batch in eval_windows(data, cfg, seed)? {
        let b = batch.spans.len();
        if b == 0 {
            continue;
        }
        let p = pred.predict_windows(&batch)?;
        if p.shape() != batch.target.shape() {
            return Err(Error::DimensionMismatch(format!(
                "predictor returned {:?}, expected {:?}",
                p.shape(),
                batch.target.shape()
            )));
        }
        sq += p.data().iter().zip(batch.target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let n = b * cfg.frames;
        let mut g = Graph::new();
        let pv = g.constant(p);
        let tv = g.constant(batch.target.clone());
        let l = loss_vertex(&mut g, &data.model, pv, tv, &batch.shape_seq, &batch.pose)?;
        vtx += g.value(l).item() * n as f64;
        frames += n;
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("no complete evaluation window in the dataset".into()));
    }
    Ok(A2EMetrics { expression_error: sq / frames as f64, mouth_vertex_error: vtx / frames as f64, frames })
}

/// Mean Euclidean pixel distance between projected mouth vertices of paired
/// coefficient sets.
pub fn lmd_score(model: &MorphableModel, gt: &[Coeff3D], pred: &[Coeff3D], focal: f64) -> Result<f64> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::InvalidArgument(format!("lmd needs equal non-empty sets, got {} and {}", gt.len(), pred.len())));
    }
    let idx = &model.mouth_indices;
    let mut total = 0.0;
    for (a, b) in gt.iter().zip(pred) {
        let pa = project(&model.compute_vertices(a)?, a.tau, focal)?;
        let pb = project(&model.compute_vertices(b)?, b.tau, focal)?;
        for &i in idx {
            let (p, q) = (pa.points[i], pb.points[i]);
            total += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        }
    }
    Ok(total / (gt.len() * idx.len()) as f64)
}

/// LMD of predicted expressions, keeping ground-truth shape, pose and offset.
pub fn evaluate_lmd(pred: &dyn ExprPredictor, data: &Dataset, cfg: &A2EConfig, seed: u64) -> Result<f64> {
    let mut gt = Vec::new();
    let mut pr = Vec::new();
    let de = cfg.expr_dim;
    for batch in eval_windows(data, cfg, seed)? {
        if batch.spans.is_empty() {
            continue;
        }
        let p = pred.predict_windows(&batch)?;
        for (k, &(c, s)) in batch.spans.iter().enumerate() {
            for f in 0..cfg.frames {
                let truth = data.clips[c].track.coeff(s + f);
                let off = (k * cfg.frames + f) * de;
                let mut q = truth.clone();
                q.expr = p.data()[off..off + de].to_vec();
                gt.push(truth);
                pr.push(q);
            }
        }
    }
    lmd_score(&data.model, &gt, &pr, data.cfg.focal_scale())
}

/// Mean absolute error over the pixels where `region` is set, all channels.
/// Zero for an empty region.
pub fn region_l1(pred: &Tensor, target: &Tensor, region: &[bool]) -> f64 {
    let hw = region.len();
    let c = pred.len() / hw;
    let mut total = 0.0;
    let mut n = 0usize;
    for ch in 0..c {
        for (p, &r) in region.iter().enumerate() {
            if r {
                total += (pred.data()[ch * hw + p] - target.data()[ch * hw + p]).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct E2FMetrics {
    /// L1 over the region regenerated by the evaluated mask.
    pub masked_l1: f64,
    /// L1 over the union of the learnable-mask and lower-half regions, so
    /// both mask variants are scored on the same pixels.
    pub union_l1: f64,
    pub frames: usize,
}

/// Reconstruction error of `renderer` on the given `(clip, frame)` pairs with
/// ground-truth coefficients and the clip's first frame as reference.
pub fn evaluate_e2f(
    renderer: &Renderer,
    data: &Dataset,
    mask: MaskKind,
    dilation: f64,
    frames: &[(usize, usize)],
) -> Result<E2FMetrics> {
    crate::train::check_e2f_data(data, &renderer.cfg)?;
    let own = MaskSettings::new(mask, data, dilation);
    let learn = MaskSettings::new(MaskKind::Learnable, data, dilation);
    let (h, w) = (data.cfg.height, data.cfg.width);
    let half = crate::mask::lower_half_mask(h, w);
    let (mut masked, mut union, mut n) = (0.0, 0.0, 0);
    for &(c, t) in frames {
        let clip = data.clips.get(c).ok_or_else(|| Error::InvalidArgument(format!("clip {c} out of range")))?;
        if t >= clip.n_frames() {
            return Err(Error::InvalidArgument(format!("frame {t} beyond clip {c}")));
        }
        let coeff = clip.track.coeff(t);
        let (m, _) = own.frame_masks(&data.model, &coeff)?;
        let (lm, _) = learn.frame_masks(&data.model, &coeff)?;
        let source = clip.frame(t).0;
        let batch = RenderBatch {
            source: source.clone().reshape([1, IMAGE_CHANNELS, h, w]),
            reference: clip.frame(0).0.reshape([1, IMAGE_CHANNELS, h, w]),
            mask: m.to_tensor().reshape([1, 1, h, w]),
            coeffs: Tensor::new([1, renderer.cfg.coeff_dim()], coeff_row(&coeff.shape, &coeff.expr, &clip.track.pose_row(t))),
        };
        let out = renderer.render_frames(&batch)?;
        let own_region: Vec<bool> = m.data.iter().map(|&v| v == 0).collect();
        let union_region: Vec<bool> = lm.data.iter().zip(&half.data).map(|(&a, &b)| a == 0 || b == 0).collect();
        masked += region_l1(&out, &source, &own_region);
        union += region_l1(&out, &source, &union_region);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    Ok(E2FMetrics { masked_l1: masked / n as f64, union_l1: union / n as f64, frames: n })
}

/// Where inference takes expressions from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExprSource {
    Predicted,
    /// Ground-truth expressions of the clip, bypassing stage 1.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOptions {
    pub seed: u64,
    pub mask: MaskKind,
    pub dilation: f64,
    pub expr: ExprSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutput {
    pub frames: Vec<FrameTensor>,
    pub masks: Vec<MaskImage>,
    /// `[frames, d_e]` expressions used for rendering.
    pub expr: Tensor,
}

/// Drives the clip's video with its audio: non-overlapping windows of `T`
/// frames (the last one padded by repeating the final audio row), predicted
/// expressions rendered onto the clip's frames with the clip's first frame as
/// reference. Produces `floor(audio rows / 2)` frames.
pub fn infer_clip(
    a2e: &A2EModel,
    renderer: &Renderer,
    data: &Dataset,
    clip: &ClipSample,
    opts: &InferOptions,
) -> Result<InferOutput> {
    let cfg = &a2e.cfg;
    check_a2e_data(data, cfg)?;
    crate::train::check_e2f_data(data, &renderer.cfg)?;
    let rows = clip.audio.shape()[0];
    let da = cfg.audio_dim;
    let n_out = rows / AUDIO_PER_FRAME;
    let nf = clip.n_frames();
    if n_out == 0 || nf == 0 {
        return Err(Error::InvalidArgument("clip has no audio frames".into()));
    }
    let (t, de) = (cfg.frames, cfg.expr_dim);
    let mut rng = seeded_rng(opts.seed, 0x1f7);
    let mut expr = Vec::with_capacity(n_out * de);
    let mut start = 0;
    while start < n_out {
        let len = t.min(n_out - start);
        match opts.expr {
            ExprSource::GroundTruth => {
                for f in start..start + len {
                    expr.extend_from_slice(clip.track.expr_row(f.min(nf - 1)));
                }
            }
            ExprSource::Predicted => {
                let mut audio = Vec::with_capacity(cfg.audio_len * da);
                for j in 0..cfg.audio_len {
                    let r = (AUDIO_PER_FRAME * start + j).min(rows - 1);
                    audio.extend_from_slice(&clip.audio.data()[r * da..(r + 1) * da]);
                }
                let mut hist = Vec::with_capacity(cfg.history * de);
                for h in sample_history(&mut rng, nf, start, len, cfg.history) {
                    hist.extend_from_slice(clip.track.expr_row(h));
                }
                let inputs = A2EInputs {
                    audio: Tensor::new([1, cfg.audio_len, da], audio),
                    shape: Tensor::new([1, cfg.shape_dim], clip.track.shape.clone()),
                    history: Tensor::new([1, cfg.history, de], hist),
                };
                let p = a2e.predict(&inputs)?;
                expr.extend_from_slice(&p.data()[..len * de]);
            }
        }
        start += len;
    }
    let settings = MaskSettings::new(opts.mask, data, opts.dilation);
    let (h, w) = (data.cfg.height, data.cfg.width);
    let reference = clip.frame(0).0.reshape([1, IMAGE_CHANNELS, h, w]);
    let mut frames = Vec::with_capacity(n_out);
    let mut masks = Vec::with_capacity(n_out);
    for f in 0..n_out {
        let src_t = f.min(nf - 1);
        let mut coeff = clip.track.coeff(src_t);
        coeff.expr = expr[f * de..(f + 1) * de].to_vec();
        let (m, _) = settings.frame_masks(&data.model, &coeff)?;
        let batch = RenderBatch {
            source: clip.frame(src_t).0.reshape([1, IMAGE_CHANNELS, h, w]),
            reference: reference.clone(),
            mask: m.to_tensor().reshape([1, 1, h, w]),
            coeffs: Tensor::new([1, renderer.cfg.coeff_dim()], coeff_row(&coeff.shape, &coeff.expr, &clip.track.pose_row(src_t))),
        };
        let out = renderer.render_frames(&batch)?;
        frames.push(FrameTensor::new(out.reshape([IMAGE_CHANNELS, h, w]))?);
        masks.push(m);
    }
    Ok(InferOutput { frames, masks, expr: Tensor::new([n_out, de], expr) })
}
