//! Oracle suites: rasterizer against point-in-polygon, attention against
//! hand-rolled loops, and analytic gradients against finite differences.

use std::fmt;
use std::str::FromStr;

use autograd::check::check_inputs;
use autograd::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio2expr::{
    loss_a2e, loss_mse, loss_vertex, periodic_encoding, A2EConfig, A2EInputs, A2EModel,
};
use crate::baselines::{cross_attend, AlignmentKind};
use crate::error::{Error, Result};
use crate::losses::{adversarial_losses, d_loss_from_logits, perceptual, pixel_l1, teeth_l1, Discriminator, RandomConvFeatures};
use crate::morphable::gen_synthetic_model;
use crate::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention, LN_EPS};
use crate::raster::{distance_to_boundary, point_in_polygon, scanline_fill};
use crate::renderer::{adain_inject, Renderer, RendererConfig};
use crate::seeded_rng;

pub const ATTENTION_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
pub const RENDER_GRAD_TOL: f64 = 1e-3;
pub const EDGE_BAND: f64 = 0.5;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name: name.to_string(), passed, detail });
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}/{}: {}", if c.passed { "ok  " } else { "FAIL" }, self.suite, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Rasterizer,
    Attention,
    Gradient,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Rasterizer, Suite::Attention, Suite::Gradient];

    pub fn run(self, seed: u64) -> Result<SuiteReport> {
        match self {
            Suite::Rasterizer => Ok(rasterizer_suite(seed, 100, 64)),
            Suite::Attention => attention_suite(seed),
            Suite::Gradient => gradient_suite(seed),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Rasterizer => "rasterizer",
            Suite::Attention => "attention",
            Suite::Gradient => "gradient",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}` (rasterizer, attention, gradient)")))
    }
}

/// Random polygon: convex hull-like star, or arbitrary (possibly
/// self-intersecting) vertex loop, partly outside the image.
pub fn random_polygon(rng: &mut ChaCha8Rng, size: usize) -> Vec<[f64; 2]> {
    let s = size as f64;
    let n = rng.random_range(3..=12);
    if rng.random_bool(0.5) {
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let r = rng.random_range(0.1 * s..0.6 * s);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        angles
            .into_iter()
            .map(|a| {
                let rr = r * rng.random_range(0.3..1.0);
                [cx + rr * a.cos(), cy + rr * a.sin()]
            })
            .collect()
    } else {
        (0..n).map(|_| [rng.random_range(-0.15 * s..1.15 * s), rng.random_range(-0.15 * s..1.15 * s)]).collect()
    }
}

/// Pixels whose coverage disagrees with the point-in-polygon test at the
/// pixel centre, ignoring centres within `EDGE_BAND` of an edge.
pub fn raster_disagreements(poly: &[[f64; 2]], h: usize, w: usize) -> usize {
    let cover = scanline_fill(poly, h, w);
    let mut bad = 0;
    for y in 0..h {
        for x in 0..w {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            if distance_to_boundary(poly, p) < EDGE_BAND {
                continue;
            }
            if cover[y * w + x] != point_in_polygon(poly, p) {
                bad += 1;
            }
        }
    }
    bad
}

pub fn rasterizer_suite(seed: u64, polygons: usize, size: usize) -> SuiteReport {
    let mut rng = seeded_rng(seed, 0x7a57);
    let mut report = SuiteReport { suite: Suite::Rasterizer, checks: Vec::new() };
    let mut total = 0;
    let mut worst = (0, 0);
    for i in 0..polygons {
        let poly = random_polygon(&mut rng, size);
        let bad = raster_disagreements(&poly, size, size);
        total += bad;
        if bad > worst.1 {
            worst = (i, bad);
        }
    }
    report.check(
        "scanline_vs_point_in_polygon",
        total == 0,
        format!("{polygons} polygons at {size}x{size}: {total} disagreements (worst polygon {} with {})", worst.0, worst.1),
    );
    report
}

// Loop oracles. Rows are token vectors.

fn loop_linear(store: &ParamStore, l: &Linear, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = store.get(l.w);
    let b = store.get(l.b);
    x.iter()
        .map(|row| {
            (0..l.d_out)
                .map(|o| b.data()[o] + (0..l.d_in).map(|i| row[i] * w.data()[i * l.d_out + o]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn loop_layer_norm(store: &ParamStore, ln: &LayerNorm, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (ga, be) = (store.get(ln.gamma).data(), store.get(ln.beta).data());
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter().enumerate().map(|(i, v)| (v - mean) / (var + LN_EPS).sqrt() * ga[i] + be[i]).collect()
        })
        .collect()
}

fn loop_gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn loop_ffn(store: &ParamStore, f: &FeedForward, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h: Vec<Vec<f64>> = loop_linear(store, &f.fc1, x).into_iter().map(|r| r.into_iter().map(loop_gelu).collect()).collect();
    loop_linear(store, &f.fc2, &h)
}

/// Returns the projected output rows and weights `[head][query][key]`.
pub(crate) fn loop_attention(
    store: &ParamStore,
    a: &MultiHeadAttention,
    xq: &[Vec<f64>],
    xkv: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let q = loop_linear(store, &a.q, xq);
    let k = loop_linear(store, &a.k, xkv);
    let v = loop_linear(store, &a.v, xkv);
    let d = a.q.d_out;
    let dh = d / a.heads;
    let mut ctx = vec![vec![0.0; d]; xq.len()];
    let mut weights = Vec::with_capacity(a.heads);
    for h in 0..a.heads {
        let mut wh = Vec::with_capacity(xq.len());
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| (0..dh).map(|e| qi[h * dh + e] * kj[h * dh + e]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            let row: Vec<f64> = ex.iter().map(|e| e / z).collect();
            for (j, vj) in v.iter().enumerate() {
                for e in 0..dh {
                    ctx[i][h * dh + e] += row[j] * vj[h * dh + e];
                }
            }
            wh.push(row);
        }
        weights.push(wh);
    }
    (loop_linear(store, &a.o, &ctx), weights)
}

fn add_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn rows_of(t: &Tensor, batch: usize) -> Vec<Vec<f64>> {
    let s = t.shape();
    let (n, d) = (s[1], s[2]);
    (0..n).map(|i| t.data()[(batch * n + i) * d..(batch * n + i + 1) * d].to_vec()).collect()
}

fn max_diff_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_diff_weights(t: &Tensor, w: &[Vec<Vec<f64>>]) -> f64 {
    let flat: Vec<f64> = w.iter().flatten().flatten().copied().collect();
    t.data().iter().zip(&flat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn perturb_store(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

/// Loop re-implementation of the full transformer forward pass.
pub(crate) fn loop_a2e_forward(m: &A2EModel, x: &A2EInputs, batch: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let c = &m.cfg;
    let s = &m.params;
    let audio = rows_of(&x.audio, batch);
    let shape = if c.use_shape { x.shape.data()[batch * c.shape_dim..(batch + 1) * c.shape_dim].to_vec() } else { vec![0.0; c.shape_dim] };
    let hist = if c.use_history { rows_of(&x.history, batch) } else { vec![vec![0.0; c.expr_dim]; c.history] };
    let mut tokens = loop_linear(s, &m.emb_audio, &audio);
    tokens.extend(loop_linear(s, &m.emb_shape, &[shape]));
    tokens.extend(loop_linear(s, &m.emb_hist, &hist));
    for (t, p) in tokens.iter_mut().zip(c.token_positions()) {
        for (v, e) in t.iter_mut().zip(periodic_encoding(p, c.latent_dim, c.pe_period)) {
            *v += e;
        }
    }
    let mut h = tokens;
    for l in &m.enc {
        let n = loop_layer_norm(s, &l.ln1, &h);
        h = add_rows(&h, &loop_attention(s, &l.attn, &n, &n).0);
        let n = loop_layer_norm(s, &l.ln2, &h);
        h = add_rows(&h, &loop_ffn(s, &l.ffn, &n));
    }
    let memory = loop_layer_norm(s, &m.enc_ln, &h);
    let qt = s.get(m.queries);
    let mut q: Vec<Vec<f64>> = (0..c.frames).map(|t| qt.data()[t * c.latent_dim..(t + 1) * c.latent_dim].to_vec()).collect();
    if c.query_pos_encoding {
        for (t, row) in q.iter_mut().enumerate() {
            for (v, e) in row.iter_mut().zip(periodic_encoding(t as f64, c.latent_dim, c.pe_period)) {
                *v += e;
            }
        }
    }
    let mut h = q;
    for l in &m.dec {
        let n = loop_layer_norm(s, &l.ln1, &h);
        h = add_rows(&h, &loop_attention(s, &l.self_attn, &n, &n).0);
        let n = loop_layer_norm(s, &l.ln2, &h);
        h = add_rows(&h, &loop_attention(s, &l.cross_attn, &n, &memory).0);
        let n = loop_layer_norm(s, &l.ln3, &h);
        h = add_rows(&h, &loop_ffn(s, &l.ffn, &n));
    }
    let out = loop_linear(s, &m.head, &loop_layer_norm(s, &m.dec_ln, &h));
    (memory, out)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn rows_tensor(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    Tensor::new([1, rows.len(), d], rows.iter().flatten().copied().collect())
}

pub fn attention_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded_rng(seed, 0xa77);
    let mut report = SuiteReport { suite: Suite::Attention, checks: Vec::new() };

    // Bare multi-head attention, self and cross form.
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut rng);
    perturb_store(&mut store, &mut rng, 0.3);
    for (name, nq) in [("self_attention", 4usize), ("cross_attention", 3)] {
        let xq = random_rows(&mut rng, nq, 8);
        let xkv = if nq == 4 { xq.clone() } else { random_rows(&mut rng, 4, 8) };
        let mut g = Graph::new();
        g.attach(&store, false);
        let (a, b) = (g.constant(rows_tensor(&xq)), g.constant(rows_tensor(&xkv)));
        let out = mha.forward(&mut g, a, b);
        let (lo, lw) = loop_attention(&store, &mha, &xq, &xkv);
        let e = max_diff_rows(&rows_of(g.value(out.out), 0), &lo).max(max_diff_weights(g.value(out.weights), &lw));
        report.check(name, e <= ATTENTION_TOL, format!("max abs diff {e:.2e}"));
    }

    // Spatial cross-attention on 2x2 maps (4 tokens), residual included.
    {
        let (c, h, w) = (8, 2, 2);
        let fq = Tensor::uniform([1, c, h, w], -1.0, 1.0, &mut rng);
        let fk = Tensor::uniform([1, c, h, w], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        g.attach(&store, false);
        let (a, b) = (g.constant(fq.clone()), g.constant(fk.clone()));
        let (out, weights) = cross_attend(&mut g, &mha, a, b);
        let tok = |t: &Tensor| -> Vec<Vec<f64>> { (0..h * w).map(|p| (0..c).map(|ch| t.data()[ch * h * w + p]).collect()).collect() };
        let (lo, lw) = loop_attention(&store, &mha, &tok(&fq), &tok(&fk));
        let mut e = max_diff_weights(g.value(weights), &lw);
        let o = g.value(out);
        for p in 0..h * w {
            for ch in 0..c {
                e = e.max((o.data()[ch * h * w + p] - (fq.data()[ch * h * w + p] + lo[p][ch])).abs());
            }
        }
        report.check("cross_attend", e <= ATTENTION_TOL, format!("max abs diff {e:.2e}"));
    }

    // Whole transformer with 4 encoder tokens and 2 queries.
    {
        let cfg = A2EConfig {
            audio_len: 2,
            history: 1,
            frames: 2,
            latent_dim: 8,
            heads: 2,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 12,
            audio_dim: 3,
            shape_dim: 2,
            expr_dim: 3,
            pe_period: 2,
            init_seed: seed,
            ..A2EConfig::default()
        };
        let mut model = A2EModel::new(cfg.clone())?;
        perturb_store(&mut model.params, &mut rng, 0.2);
        let x = A2EInputs {
            audio: Tensor::uniform([2, 2, 3], -1.0, 1.0, &mut rng),
            shape: Tensor::uniform([2, 2], -1.0, 1.0, &mut rng),
            history: Tensor::uniform([2, 1, 3], -1.0, 1.0, &mut rng),
        };
        let mut g = Graph::new();
        g.attach(&model.params, false);
        let f = model.forward(&mut g, &x)?;
        let (mut em, mut ep) = (0.0f64, 0.0f64);
        for b in 0..2 {
            let (mem, pred) = loop_a2e_forward(&model, &x, b);
            em = em.max(max_diff_rows(&rows_of(g.value(f.memory), b), &mem));
            ep = ep.max(max_diff_rows(&rows_of(g.value(f.pred), b), &pred));
        }
        report.check("cmsa_encoder", em <= ATTENTION_TOL, format!("memory max abs diff {em:.2e}"));
        report.check("tca_decoder", ep <= ATTENTION_TOL, format!("prediction max abs diff {ep:.2e}"));
    }
    Ok(report)
}

fn grad_check<'s>(report: &mut SuiteReport, name: &str, tol: f64, build: impl Fn(&mut Graph<'s>, &[Var]) -> Var, inputs: &[Tensor], elements: Option<&[(usize, usize)]>) {
    let r = check_inputs(build, inputs, FD_STEP, elements);
    let e = r.max_rel_error();
    report.check(name, e <= tol && !r.is_empty(), format!("{} entries, max rel error {e:.2e}", r.len()));
}

fn sample_elements(rng: &mut ChaCha8Rng, sizes: &[usize], per: usize) -> Vec<(usize, usize)> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..per.min(n)).map(|_| (i, rng.random_range(0..n))).collect::<Vec<_>>())
        .collect()
}

pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded_rng(seed, 0x96ad);
    let mut report = SuiteReport { suite: Suite::Gradient, checks: Vec::new() };

    // Stage-1 loss with respect to the prediction.
    let model = gen_synthetic_model(seed, 24, 3, 4)?;
    let shape = Tensor::uniform([2, 3, 3], -1.0, 1.0, &mut rng);
    let pose = Tensor::uniform([2, 3, 6], -0.2, 0.2, &mut rng);
    let target = Tensor::uniform([2, 3, 4], -1.0, 1.0, &mut rng);
    let pred = Tensor::uniform([2, 3, 4], -1.0, 1.0, &mut rng);
    grad_check(
        &mut report,
        "loss_a2e",
        GRAD_TOL,
        |g, v| {
            let t = g.constant(target.clone());
            let m = loss_mse(g, v[0], t).unwrap();
            let l = loss_vertex(g, &model, v[0], t, &shape, &pose).unwrap();
            loss_a2e(g, m, l, 0.1)
        },
        &[pred],
        None,
    );

    // Renderer losses on small images.
    let img = [1, 3, 16, 16];
    let a = Tensor::uniform(img, 0.0, 1.0, &mut rng);
    let b = Tensor::uniform(img, 0.0, 1.0, &mut rng);
    let n = a.len();
    grad_check(&mut report, "pixel_l1", GRAD_TOL, |g, v| pixel_l1(g, v[0], v[1]).unwrap(), &[a.clone(), b.clone()], None);
    let feat = RandomConvFeatures::new(seed, 3);
    let els = sample_elements(&mut rng, &[n, n], 24);
    grad_check(
        &mut report,
        "perceptual",
        GRAD_TOL,
        |g, v| {
            g.attach(&feat.params, false);
            perceptual(g, &feat, v[0], v[1]).unwrap()
        },
        &[a.clone(), b.clone()],
        Some(&els),
    );
    let disc = Discriminator::new(seed, 3, 4);
    for (name, which) in [("adversarial_d", 0), ("adversarial_g", 1)] {
        let els = sample_elements(&mut rng, &[n, n], 24);
        grad_check(
            &mut report,
            name,
            GRAD_TOL,
            |g, v| {
                g.attach(&disc.params, false);
                if which == 0 {
                    // The discriminator term as seen from its inputs; inside
                    // adversarial_losses the fake enters detached.
                    let lr = disc.logits(g, v[0]);
                    let lf = disc.logits(g, v[1]);
                    d_loss_from_logits(g, lr, lf)
                } else {
                    adversarial_losses(g, &disc, v[0], v[1]).unwrap().1
                }
            },
            &[a.clone(), b.clone()],
            Some(&els),
        );
    }
    let mut mask = Tensor::zeros([1, 1, 16, 16]);
    for y in 4..10 {
        for x in 3..12 {
            mask.set(&[0, 0, y, x], 1.0);
        }
    }
    grad_check(
        &mut report,
        "teeth_l1",
        GRAD_TOL,
        |g, v| teeth_l1(g, v[0], v[1], &mask).unwrap(),
        &[a.clone(), b.clone()],
        None,
    );

    // AdaIN with respect to features, scale and bias.
    let f = Tensor::uniform([2, 3, 4, 4], -1.0, 1.0, &mut rng);
    let sc = Tensor::uniform([2, 3], 0.5, 1.5, &mut rng);
    let bi = Tensor::uniform([2, 3], -0.5, 0.5, &mut rng);
    let wts = Tensor::uniform([2, 3, 4, 4], -1.0, 1.0, &mut rng);
    grad_check(
        &mut report,
        "adain",
        GRAD_TOL,
        |g, v| {
            let o = adain_inject(g, v[0], v[1], v[2]);
            let w = g.constant(wts.clone());
            let p = g.mul(o, w);
            g.sum_all(p)
        },
        &[f, sc, bi],
        None,
    );

    // Spatial cross-attention.
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "x", 8, 2, &mut rng);
    let fq = Tensor::uniform([1, 8, 3, 3], -1.0, 1.0, &mut rng);
    let fk = Tensor::uniform([1, 8, 3, 3], -1.0, 1.0, &mut rng);
    let wts = Tensor::uniform([1, 8, 3, 3], -1.0, 1.0, &mut rng);
    grad_check(
        &mut report,
        "cross_attention",
        GRAD_TOL,
        |g, v| {
            g.attach(&store, false);
            let (o, _) = cross_attend(g, &mha, v[0], v[1]);
            let w = g.constant(wts.clone());
            let p = g.mul(o, w);
            g.sum_all(p)
        },
        &[fq, fk],
        None,
    );

    // Full toy render with respect to the expression part of the coefficients.
    let cfg = RendererConfig {
        stages: 2,
        blocks_per_stage: 1,
        base_channels: 4,
        attention_stages: vec![0],
        height: 16,
        width: 16,
        adain_mlp_layers: 2,
        adain_hidden: 8,
        attn_heads: 2,
        alignment: AlignmentKind::FiaCrossAttention,
        shape_dim: 2,
        expr_dim: 3,
        init_seed: seed,
    };
    let r = Renderer::new(cfg.clone())?;
    let src = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let rf = Tensor::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let m = crate::mask::lower_half_mask(16, 16).to_tensor().reshape([1, 1, 16, 16]);
    let masked = crate::renderer::RenderBatch {
        source: src.clone(),
        reference: rf.clone(),
        mask: m.clone(),
        coeffs: Tensor::zeros([1, cfg.coeff_dim()]),
    }
    .masked_source();
    let coeffs = Tensor::uniform([1, cfg.coeff_dim()], -1.0, 1.0, &mut rng);
    let wts = Tensor::uniform([1, 3, 16, 16], -1.0, 1.0, &mut rng);
    let els: Vec<(usize, usize)> = (cfg.shape_dim..cfg.shape_dim + cfg.expr_dim).map(|e| (0, e)).collect();
    grad_check(
        &mut report,
        "full_render_wrt_expression",
        RENDER_GRAD_TOL,
        |g, v| {
            g.attach(&r.params, false);
            let (ms, rv, sv, mv) = (g.constant(masked.clone()), g.constant(rf.clone()), g.constant(src.clone()), g.constant(m.clone()));
            let out = r.render(g, ms, rv, sv, mv, v[0]).unwrap();
            let w = g.constant(wts.clone());
            let p = g.mul(out.frame, w);
            g.sum_all(p)
        },
        &[coeffs],
        Some(&els),
    );
    Ok(report)
}
