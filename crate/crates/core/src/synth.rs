//! Deterministic synthetic clips.
//!
//! Expressions follow a dataset-wide law. The coefficient space is split into
//! three orthogonal subspaces:
//!
//! * `U1` carries band-limited content `u_t`; audio is a linear map of this
//!   part only, so it is recoverable from audio.
//! * `U2` carries `a(alpha) * D u_t` plus a slow per-clip drift: the amplitude
//!   depends on the speaker's shape coefficients and the drift is only
//!   visible in other frames of the same clip.
//! * `U3` holds a constant per-clip offset that audio never reveals. Part of
//!   its variance is a linear function of the shape coefficients, the rest is
//!   clip-specific.
//!
//! Audio runs at twice the frame rate: features `2t` and `2t+1` are two fixed
//! linear maps of `beta_t`, plus optional noise.

use std::f64::consts::PI;
use std::path::Path;

use autograd::Tensor;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::container::{Array, ArrayDir};
use crate::error::{Error, Result};
use crate::image::FrameTensor;
use crate::morphable::{gen_synthetic_model, Coeff3D, MorphableModel, Pose};
use crate::seeded_rng;

const SINES_PER_DIM: usize = 3;
const MIN_FREQ: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub global_seed: u64,
    pub n_vertices: usize,
    pub shape_dim: usize,
    pub expr_dim: usize,
    pub audio_dim: usize,
    pub height: usize,
    pub width: usize,
    /// Highest content frequency, cycles per frame.
    pub band_limit: f64,
    /// Standard deviation of additive audio noise.
    pub audio_noise: f64,
    /// Scale of the per-clip `U3` offset.
    pub offset_scale: f64,
    /// Fraction of the offset variance explained by shape, in `[0, 1]`.
    pub offset_shape_share: f64,
    /// Amplitude of the per-clip `U2` drift.
    pub drift_scale: f64,
    /// Strength of the shape dependence, `a = 1 + s * tanh(v . alpha)`.
    pub shape_gain: f64,
    pub pose_amplitude: f64,
    /// Peak image-plane jitter in pixels.
    pub tau_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            global_seed: 0,
            n_vertices: 128,
            shape_dim: 4,
            expr_dim: 8,
            audio_dim: 16,
            height: 64,
            width: 64,
            band_limit: 0.12,
            audio_noise: 0.0,
            offset_scale: 0.6,
            offset_shape_share: 0.7,
            drift_scale: 0.25,
            shape_gain: 0.6,
            pose_amplitude: 0.06,
            tau_jitter: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn focal_scale(&self) -> f64 {
        self.height as f64 / 4.0
    }

    /// Image position of the model origin.
    pub fn tau_center(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 * 0.4]
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape_dim == 0 || self.expr_dim == 0 || self.audio_dim == 0 {
            return Err(Error::Config("data dimensions must be positive".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config("data image size must be at least 8x8".into()));
        }
        if !(self.band_limit > MIN_FREQ && self.band_limit <= 0.5) {
            return Err(Error::Config(format!("data.band_limit must be in ({MIN_FREQ}, 0.5]")));
        }
        let nonneg = [self.audio_noise, self.offset_scale, self.drift_scale, self.shape_gain, self.pose_amplitude, self.tau_jitter];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("data noise and scale settings must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.offset_shape_share) {
            return Err(Error::Config("data.offset_shape_share must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Header entries describing the configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("global_seed".into(), self.global_seed.to_string()),
            ("n_vertices".into(), self.n_vertices.to_string()),
            ("shape_dim".into(), self.shape_dim.to_string()),
            ("expr_dim".into(), self.expr_dim.to_string()),
            ("audio_dim".into(), self.audio_dim.to_string()),
            ("height".into(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
            ("band_limit".into(), self.band_limit.to_string()),
            ("audio_noise".into(), self.audio_noise.to_string()),
            ("offset_scale".into(), self.offset_scale.to_string()),
            ("offset_shape_share".into(), self.offset_shape_share.to_string()),
            ("drift_scale".into(), self.drift_scale.to_string()),
            ("shape_gain".into(), self.shape_gain.to_string()),
            ("pose_amplitude".into(), self.pose_amplitude.to_string()),
            ("tau_jitter".into(), self.tau_jitter.to_string()),
        ]
    }

    pub fn from_header(d: &ArrayDir) -> Result<Self> {
        fn get<T: std::str::FromStr>(d: &ArrayDir, k: &str) -> Result<T> {
            d.header_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("dataset manifest lacks a valid `{k}`")))
        }
        let c = SynthConfig {
            global_seed: get(d, "global_seed")?,
            n_vertices: get(d, "n_vertices")?,
            shape_dim: get(d, "shape_dim")?,
            expr_dim: get(d, "expr_dim")?,
            audio_dim: get(d, "audio_dim")?,
            height: get(d, "height")?,
            width: get(d, "width")?,
            band_limit: get(d, "band_limit")?,
            audio_noise: get(d, "audio_noise")?,
            offset_scale: get(d, "offset_scale")?,
            offset_shape_share: get(d, "offset_shape_share")?,
            drift_scale: get(d, "drift_scale")?,
            shape_gain: get(d, "shape_gain")?,
            pose_amplitude: get(d, "pose_amplitude")?,
            tau_jitter: get(d, "tau_jitter")?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Sizes of the three coefficient subspaces for `d_e` expression dims.
pub fn subspace_split(d_e: usize) -> (usize, usize, usize) {
    let k1 = ((3 * d_e + 7) / 8).max(1).min(d_e);
    let k2 = (3 * d_e / 8).min(d_e - k1);
    (k1, k2, d_e - k1 - k2)
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

/// Columns of a random orthonormal `n x n` matrix (Gram-Schmidt).
fn random_orthonormal<R: Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    cols
}

/// Dataset-level constants shared by all clips.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthLaw {
    pub cfg: SynthConfig,
    /// Orthonormal columns; the first `k1` span `U1`, the next `k2` `U2`.
    pub basis: Vec<Vec<f64>>,
    pub split: (usize, usize, usize),
    /// `k2 x k1`
    pub mix: Vec<Vec<f64>>,
    /// Unit direction in shape space driving the `U2` amplitude.
    pub shape_dir: Vec<f64>,
    /// Audio maps from `U1` coordinates, `d_a x k1`, for even and odd features.
    pub audio_even: Vec<Vec<f64>>,
    pub audio_odd: Vec<Vec<f64>>,
    /// `k3 x shape_dim` with unit rows: the shape-driven part of the offset.
    pub offset_map: Vec<Vec<f64>>,
}

impl SynthLaw {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.global_seed, 0x1a3);
        let d_e = cfg.expr_dim;
        let split = subspace_split(d_e);
        let (k1, k2, k3) = split;
        let basis = random_orthonormal(d_e, &mut rng);
        let mix = gaussian_matrix(k2, k1, 1.0 / (k1 as f64).sqrt(), &mut rng);
        let mut shape_dir: Vec<f64> = (0..cfg.shape_dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = shape_dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        shape_dir.iter_mut().for_each(|x| *x /= n);
        let audio_even = gaussian_matrix(cfg.audio_dim, k1, 1.0 / (k1 as f64).sqrt(), &mut rng);
        let audio_odd = gaussian_matrix(cfg.audio_dim, k1, 1.0 / (k1 as f64).sqrt(), &mut rng);
        let mut offset_map = gaussian_matrix(k3, cfg.shape_dim, 1.0, &mut rng);
        for row in &mut offset_map {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(SynthLaw { cfg: cfg.clone(), basis, split, mix, shape_dir, audio_even, audio_odd, offset_map })
    }

    /// `U2` amplitude for shape coefficients `alpha`.
    pub fn shape_amplitude(&self, alpha: &[f64]) -> f64 {
        let proj: f64 = alpha.iter().zip(&self.shape_dir).map(|(a, v)| a * v).sum();
        1.0 + self.cfg.shape_gain * proj.tanh()
    }

    /// Audio-side linear map `d_a x d_e` for even (`odd = false`) or odd features.
    pub fn audio_map(&self, odd: bool) -> Vec<Vec<f64>> {
        let w = if odd { &self.audio_odd } else { &self.audio_even };
        let d_e = self.cfg.expr_dim;
        w.iter()
            .map(|row| (0..d_e).map(|j| row.iter().enumerate().map(|(i, wi)| wi * self.basis[i][j]).sum()).collect())
            .collect()
    }

    /// Generates one clip's coefficient track.
    pub fn gen_coeff_track(&self, clip_seed: u64, frames: usize) -> CoeffTrack {
        let cfg = &self.cfg;
        let mut rng = seeded_rng(clip_seed, 0x7ac);
        let (k1, k2, _) = self.split;
        let d_e = cfg.expr_dim;
        let shape: Vec<f64> = (0..cfg.shape_dim).map(|_| rng.sample(StandardNormal)).collect();
        let amp = self.shape_amplitude(&shape);

        // A sinusoid term contributes `coef * sin(2 pi f t + phase)` to beta.
        struct Term {
            coef: Vec<f64>,
            freq: f64,
            phase: f64,
        }
        let mut terms: Vec<Term> = Vec::new();
        let sine = |rng: &mut dyn RngCore, scale: f64| -> (f64, f64, f64) {
            let a = scale * (2.0 / SINES_PER_DIM as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
            let f = rng.random_range(MIN_FREQ..cfg.band_limit);
            let p = rng.random_range(0.0..2.0 * PI);
            (a, f, p)
        };
        for i in 0..k1 {
            for _ in 0..SINES_PER_DIM {
                let (a, f, p) = sine(&mut rng, 1.0);
                let coef = (0..d_e)
                    .map(|j| {
                        let u2: f64 = (0..k2).map(|m| self.basis[k1 + m][j] * self.mix[m][i]).sum();
                        a * (self.basis[i][j] + amp * u2)
                    })
                    .collect();
                terms.push(Term { coef, freq: f, phase: p });
            }
        }
        for m in 0..k2 {
            for _ in 0..SINES_PER_DIM {
                let (a, f, p) = sine(&mut rng, cfg.drift_scale);
                terms.push(Term { coef: (0..d_e).map(|j| a * self.basis[k1 + m][j]).collect(), freq: f, phase: p });
            }
        }
        let (ws, wc) = (cfg.offset_shape_share.sqrt(), (1.0 - cfg.offset_shape_share).sqrt());
        let offset_coords: Vec<f64> = self
            .offset_map
            .iter()
            .map(|row| {
                let from_shape: f64 = row.iter().zip(&shape).map(|(m, a)| m * a).sum();
                cfg.offset_scale * (ws * from_shape + wc * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let offset: Vec<f64> = (0..d_e)
            .map(|j| offset_coords.iter().enumerate().map(|(n, o)| o * self.basis[k1 + k2 + n][j]).sum())
            .collect();

        let mut expr = Tensor::zeros([frames, d_e]);
        for t in 0..frames {
            for j in 0..d_e {
                let v: f64 = terms.iter().map(|s| s.coef[j] * (2.0 * PI * s.freq * t as f64 + s.phase).sin()).sum();
                expr.set(&[t, j], offset[j] + v);
            }
        }
        let step_bound = (0..d_e)
            .map(|j| terms.iter().map(|s| s.coef[j].abs() * 2.0 * PI * s.freq).sum::<f64>())
            .fold(0.0, f64::max);

        // Slow rigid motion.
        let mut slow = |amp: f64| -> (f64, f64, f64) {
            (amp * rng.random_range(0.5..1.0), rng.random_range(0.005..0.03), rng.random_range(0.0..2.0 * PI))
        };
        let pose_terms: Vec<(f64, f64, f64)> = (0..6)
            .map(|k| slow(if k < 3 { cfg.pose_amplitude } else { 0.5 * cfg.pose_amplitude }))
            .collect();
        let tau_terms: Vec<(f64, f64, f64)> = (0..2).map(|_| slow(cfg.tau_jitter)).collect();
        let center = cfg.tau_center();
        let mut pose = Tensor::zeros([frames, 6]);
        let mut tau = Tensor::zeros([frames, 2]);
        for t in 0..frames {
            let s = |(a, f, p): (f64, f64, f64)| a * (2.0 * PI * f * t as f64 + p).sin();
            for (k, &term) in pose_terms.iter().enumerate() {
                pose.set(&[t, k], s(term));
            }
            for (k, &term) in tau_terms.iter().enumerate() {
                tau.set(&[t, k], center[k] + s(term));
            }
        }
        CoeffTrack { shape, expr, pose, tau, step_bound }
    }

    /// Audio features for a track: `[2 T', d_a]`.
    pub fn derive_audio(&self, track: &CoeffTrack, noise_seed: u64) -> Tensor {
        let mut rng = seeded_rng(noise_seed, 0xa0d);
        let (frames, d_a) = (track.frames(), self.cfg.audio_dim);
        let maps = [self.audio_map(false), self.audio_map(true)];
        let mut out = Tensor::zeros([2 * frames, d_a]);
        for t in 0..frames {
            let beta = &track.expr.data()[t * self.cfg.expr_dim..(t + 1) * self.cfg.expr_dim];
            for (h, map) in maps.iter().enumerate() {
                for (i, row) in map.iter().enumerate() {
                    let mut v: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
                    if self.cfg.audio_noise > 0.0 {
                        v += self.cfg.audio_noise * rng.sample::<f64, _>(StandardNormal);
                    }
                    out.set(&[2 * t + h, i], v);
                }
            }
        }
        out
    }
}

/// Per-frame coefficients of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffTrack {
    /// Constant shape coefficients.
    pub shape: Vec<f64>,
    /// `[T', d_e]`
    pub expr: Tensor,
    /// `[T', 6]`: angles then 3D translation.
    pub pose: Tensor,
    /// `[T', 2]` pixel offsets.
    pub tau: Tensor,
    /// Upper bound on `|beta_{t+1} - beta_t|` in any coordinate.
    pub step_bound: f64,
}

impl CoeffTrack {
    pub fn frames(&self) -> usize {
        self.expr.shape()[0]
    }

    pub fn expr_row(&self, t: usize) -> &[f64] {
        let d = self.expr.shape()[1];
        &self.expr.data()[t * d..(t + 1) * d]
    }

    pub fn pose_row(&self, t: usize) -> [f64; 6] {
        self.pose.data()[t * 6..t * 6 + 6].try_into().unwrap()
    }

    pub fn coeff(&self, t: usize) -> Coeff3D {
        Coeff3D {
            shape: self.shape.clone(),
            expr: self.expr_row(t).to_vec(),
            pose: Pose::from_slice(&self.pose_row(t)),
            tau: [self.tau.at(&[t, 0]), self.tau.at(&[t, 1])],
        }
    }
}

/// Stand-alone track generator with the default law for `d_e` expression dims.
pub fn gen_coeff_track(seed: u64, frames: usize, d_e: usize) -> Result<CoeffTrack> {
    let law = SynthLaw::new(&SynthConfig { expr_dim: d_e, ..SynthConfig::default() })?;
    Ok(law.gen_coeff_track(seed, frames))
}

fn hash_color(i: u64) -> [f64; 3] {
    let mut x = i.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    x ^= x >> 29;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 32;
    [0, 1, 2].map(|k| 0.25 + 0.6 * ((x >> (16 * k)) & 0xffff) as f64 / 65535.0)
}

pub const LIP_COLOR: [f64; 3] = [0.85, 0.12, 0.18];
pub const TEETH_COLOR: [f64; 3] = [0.96, 0.95, 0.9];

/// Procedural portrait: every projected vertex is a Gaussian blob composited
/// back to front over a background derived from the model seed.
pub fn oracle_render(model: &MorphableModel, c: &Coeff3D, focal: f64, h: usize, w: usize) -> Result<FrameTensor> {
    let v = model.compute_vertices(c)?;
    let p = crate::morphable::project(&v, c.tau, focal)?;
    let bg = hash_color(model.seed ^ 0xb6);
    let mut img = vec![0.0; 3 * h * w];
    for ch in 0..3 {
        img[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|x| *x = 0.5 * bg[ch]);
    }
    let sigma = 1.8 * h as f64 / 64.0;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v.positions[a][2].total_cmp(&v.positions[b][2]).then(a.cmp(&b)));
    for i in order {
        let color = if model.teeth_indices.contains(&i) {
            TEETH_COLOR
        } else if model.mouth_indices.contains(&i) {
            LIP_COLOR
        } else {
            hash_color(i as u64)
        };
        let [px, py] = p.points[i];
        if !(px.is_finite() && py.is_finite()) {
            continue;
        }
        let (cx, cy) = ((px - 0.5).round() as isize, (py - 0.5).round() as isize);
        for yy in cy - radius..=cy + radius {
            for xx in cx - radius..=cx + radius {
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let (dx, dy) = (xx as f64 + 0.5 - px, yy as f64 + 0.5 - py);
                let a = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let idx = yy as usize * w + xx as usize;
                for ch in 0..3 {
                    let o = &mut img[ch * h * w + idx];
                    *o = (1.0 - a) * *o + a * color[ch];
                }
            }
        }
    }
    FrameTensor::new(Tensor::new([3, h, w], img))
}

/// One generated clip. Frames are kept 8-bit, exactly as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub clip_seed: u64,
    /// `[2 T', d_a]`
    pub audio: Tensor,
    pub track: CoeffTrack,
    /// `[T', 3, H, W]` quantized frames.
    pub frames: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl ClipSample {
    pub fn n_frames(&self) -> usize {
        self.track.frames()
    }

    pub fn frame(&self, t: usize) -> FrameTensor {
        let n = 3 * self.height * self.width;
        FrameTensor::from_u8(3, self.height, self.width, &self.frames[t * n..(t + 1) * n]).unwrap()
    }
}

/// Seed of clip `index` under `global_seed`.
pub fn clip_seed(global_seed: u64, index: u64) -> u64 {
    let mut rng = seeded_rng(global_seed, 0xc1 + index);
    rng.next_u64()
}

pub fn generate_clip(model: &MorphableModel, law: &SynthLaw, seed: u64, frames: usize) -> Result<ClipSample> {
    if frames == 0 {
        return Err(Error::InvalidArgument("clips need at least one frame".into()));
    }
    let cfg = &law.cfg;
    let track = law.gen_coeff_track(seed, frames);
    let audio = law.derive_audio(&track, seed);
    let mut bytes = Vec::with_capacity(frames * 3 * cfg.height * cfg.width);
    for t in 0..frames {
        let f = oracle_render(model, &track.coeff(t), cfg.focal_scale(), cfg.height, cfg.width)?;
        bytes.extend(f.to_u8());
    }
    Ok(ClipSample { clip_seed: seed, audio, track, frames: bytes, height: cfg.height, width: cfg.width })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cfg: SynthConfig,
    pub model: MorphableModel,
    pub clips: Vec<ClipSample>,
}

impl Dataset {
    /// Clips `first .. first + count` of the dataset defined by `cfg`.
    pub fn generate(cfg: &SynthConfig, first: u64, count: usize, frames: usize) -> Result<Self> {
        let law = SynthLaw::new(cfg)?;
        let model = gen_synthetic_model(cfg.global_seed, cfg.n_vertices, cfg.shape_dim, cfg.expr_dim)?;
        let clips = (0..count as u64)
            .map(|i| generate_clip(&model, &law, clip_seed(cfg.global_seed, first + i), frames))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { cfg: cfg.clone(), model, clips })
    }

    pub fn law(&self) -> Result<SynthLaw> {
        SynthLaw::new(&self.cfg)
    }

    pub fn to_array_dir(&self) -> ArrayDir {
        let mut d = ArrayDir::new();
        for (k, v) in self.cfg.to_pairs() {
            d.set_header(k, v);
        }
        d.set_header("model_seed", self.model.seed);
        d.set_header("clips", self.clips.len());
        let seeds: Vec<String> = self.clips.iter().map(|c| c.clip_seed.to_string()).collect();
        d.set_header("clip_seeds", seeds.join(","));
        for (name, a) in self.model.to_array_dir().arrays {
            d.push(format!("model.{name}"), a);
        }
        for (i, c) in self.clips.iter().enumerate() {
            let p = format!("clip{i:04}");
            let t = c.n_frames();
            d.push(format!("{p}.audio"), Array::from_tensor(&c.audio));
            d.push(format!("{p}.shape"), Array::from_tensor(&Tensor::new([c.track.shape.len()], c.track.shape.clone())));
            d.push(format!("{p}.expr"), Array::from_tensor(&c.track.expr));
            d.push(format!("{p}.pose"), Array::from_tensor(&c.track.pose));
            d.push(format!("{p}.tau"), Array::from_tensor(&c.track.tau));
            d.push(format!("{p}.step_bound"), Array::from_tensor(&Tensor::scalar(c.track.step_bound)));
            d.push(format!("{p}.frames"), Array::from_u8(vec![t, 3, c.height, c.width], c.frames.clone()).unwrap());
        }
        d
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.to_array_dir().write(dir)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let d = ArrayDir::read(dir)?;
        let cfg = SynthConfig::from_header(&d)?;
        let mut model_dir = ArrayDir::new();
        model_dir.set_header("seed", d.header_value("model_seed").unwrap_or(""));
        for (name, a) in &d.arrays {
            if let Some(n) = name.strip_prefix("model.") {
                model_dir.push(n, a.clone());
            }
        }
        let model = MorphableModel::from_array_dir(&model_dir)?;
        let n: usize = d
            .header_value("clips")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("dataset manifest lacks `clips`".into()))?;
        let seeds: Vec<u64> = d
            .header_value("clip_seeds")
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad clip seed `{s}`"))))
            .collect::<Result<_>>()?;
        if seeds.len() != n {
            return Err(Error::Format(format!("{} clip seeds for {n} clips", seeds.len())));
        }
        let mut clips = Vec::with_capacity(n);
        for (i, &seed) in seeds.iter().enumerate() {
            let p = format!("clip{i:04}");
            let frames_arr = d.get(&format!("{p}.frames"))?;
            let fs = frames_arr.shape().to_vec();
            let track = CoeffTrack {
                shape: d.get(&format!("{p}.shape"))?.to_tensor()?.into_data(),
                expr: d.get(&format!("{p}.expr"))?.to_tensor()?,
                pose: d.get(&format!("{p}.pose"))?.to_tensor()?,
                tau: d.get(&format!("{p}.tau"))?.to_tensor()?,
                step_bound: d.get(&format!("{p}.step_bound"))?.to_tensor()?.item(),
            };
            let t = track.frames();
            let audio = d.get(&format!("{p}.audio"))?.to_tensor()?;
            let consistent = fs.len() == 4
                && fs[0] == t
                && fs[1] == 3
                && fs[2] == cfg.height
                && fs[3] == cfg.width
                && track.expr.shape() == [t, cfg.expr_dim]
                && track.pose.shape() == [t, 6]
                && track.tau.shape() == [t, 2]
                && track.shape.len() == cfg.shape_dim
                && audio.shape() == [2 * t, cfg.audio_dim];
            if !consistent {
                return Err(Error::Format(format!("clip {i} arrays have inconsistent shapes")));
            }
            clips.push(ClipSample {
                clip_seed: seed,
                audio,
                track,
                frames: frames_arr.to_u8()?.to_vec(),
                height: cfg.height,
                width: cfg.width,
            });
        }
        Ok(Dataset { cfg, model, clips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_covers_all_dims() {
        for d in 1..20 {
            let (a, b, c) = subspace_split(d);
            assert_eq!(a + b + c, d);
            assert!(a >= 1);
        }
        assert_eq!(subspace_split(8), (3, 3, 2));
    }

    #[test]
    fn basis_is_orthonormal() {
        let law = SynthLaw::new(&SynthConfig::default()).unwrap();
        for (i, a) in law.basis.iter().enumerate() {
            for (j, b) in law.basis.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn face_fits_in_frame() {
        let cfg = SynthConfig::default();
        let model = gen_synthetic_model(0, cfg.n_vertices, 4, 8).unwrap();
        let law = SynthLaw::new(&cfg).unwrap();
        let track = law.gen_coeff_track(3, 40);
        for t in 0..40 {
            let v = model.compute_vertices(&track.coeff(t)).unwrap();
            let p = crate::morphable::project(&v, track.coeff(t).tau, cfg.focal_scale()).unwrap();
            for q in p.points {
                assert!(q[0] > 0.0 && q[0] < 64.0 && q[1] > 0.0 && q[1] < 64.0, "{q:?}");
            }
        }
    }
}
