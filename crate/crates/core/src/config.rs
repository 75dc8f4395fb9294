//! Flat `key = value` run configuration.
//!
//! Keys are dotted (`a2e.latent_dim`, `train_e2f.lr`, ...). Unknown keys and
//! unparsable values are errors. [`RunConfig::to_text`] writes every key, so
//! the output can be read back to the same configuration.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::audio2expr::A2EConfig;
use crate::baselines::AlignmentKind;
use crate::error::{Error, Result};
use crate::losses::E2FLossWeights;
use crate::renderer::RendererConfig;
use crate::synth::SynthConfig;
use crate::train::{MaskKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SynthConfig,
    pub clips: usize,
    pub frames: usize,
    pub a2e: A2EConfig,
    pub renderer: RendererConfig,
    pub mask: MaskKind,
    pub mask_dilation: f64,
    pub disc_channels: usize,
    pub loss: E2FLossWeights,
    pub train_a2e: TrainConfig,
    pub train_e2f: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: SynthConfig::default(),
            clips: 64,
            frames: 64,
            a2e: A2EConfig::default(),
            renderer: RendererConfig::default(),
            mask: MaskKind::Learnable,
            mask_dilation: crate::mask::DEFAULT_DILATION,
            disc_channels: 16,
            loss: E2FLossWeights::default(),
            train_a2e: TrainConfig::a2e_toy(),
            train_e2f: TrainConfig::e2f_toy(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn set_train(t: &mut TrainConfig, field: &str, key: &str, v: &str) -> Result<bool> {
    match field {
        "lr" => t.lr = parse(key, v)?,
        "adam_beta1" => t.adam_beta1 = parse(key, v)?,
        "adam_beta2" => t.adam_beta2 = parse(key, v)?,
        "seed" => t.seed = parse(key, v)?,
        "weight_decay" => t.weight_decay = parse(key, v)?,
        "batch_size" => t.batch_size = parse(key, v)?,
        "iterations" => t.iterations = parse(key, v)?,
        "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
        "grad_clip" => t.grad_clip = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn train_pairs(prefix: &str, t: &TrainConfig, out: &mut Vec<(String, String)>) {
    let mut p = |k: &str, v: &dyn Display| out.push((format!("{prefix}.{k}"), v.to_string()));
    p("lr", &t.lr);
    p("adam_beta1", &t.adam_beta1);
    p("adam_beta2", &t.adam_beta2);
    p("weight_decay", &t.weight_decay);
    p("batch_size", &t.batch_size);
    p("iterations", &t.iterations);
    p("seed", &t.seed);
    p("checkpoint_every", &t.checkpoint_every);
    p("grad_clip", &t.grad_clip);
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key.trim();
        let (section, field) = k.split_once('.').unwrap_or(("", k));
        let known = match section {
            "" => match field {
                "seed" => {
                    self.seed = parse(k, v)?;
                    true
                }
                _ => false,
            },
            "data" => {
                let d = &mut self.data;
                match field {
                    "n_vertices" => d.n_vertices = parse(k, v)?,
                    "shape_dim" => d.shape_dim = parse(k, v)?,
                    "expr_dim" => d.expr_dim = parse(k, v)?,
                    "audio_dim" => d.audio_dim = parse(k, v)?,
                    "height" => d.height = parse(k, v)?,
                    "width" => d.width = parse(k, v)?,
                    "band_limit" => d.band_limit = parse(k, v)?,
                    "audio_noise" => d.audio_noise = parse(k, v)?,
                    "offset_scale" => d.offset_scale = parse(k, v)?,
                    "offset_shape_share" => d.offset_shape_share = parse(k, v)?,
                    "drift_scale" => d.drift_scale = parse(k, v)?,
                    "shape_gain" => d.shape_gain = parse(k, v)?,
                    "pose_amplitude" => d.pose_amplitude = parse(k, v)?,
                    "tau_jitter" => d.tau_jitter = parse(k, v)?,
                    "clips" => self.clips = parse(k, v)?,
                    "frames" => self.frames = parse(k, v)?,
                    _ => return Err(unknown(k)),
                }
                true
            }
            "a2e" => {
                let a = &mut self.a2e;
                match field {
                    "audio_len" => a.audio_len = parse(k, v)?,
                    "history" => a.history = parse(k, v)?,
                    "frames" => a.frames = parse(k, v)?,
                    "latent_dim" => a.latent_dim = parse(k, v)?,
                    "heads" => a.heads = parse(k, v)?,
                    "enc_layers" => a.enc_layers = parse(k, v)?,
                    "dec_layers" => a.dec_layers = parse(k, v)?,
                    "ffn_dim" => a.ffn_dim = parse(k, v)?,
                    "vertex_loss_weight" => a.vertex_loss_weight = parse(k, v)?,
                    "pe_period" => a.pe_period = parse(k, v)?,
                    "query_pos_encoding" => a.query_pos_encoding = parse_bool(k, v)?,
                    "use_shape" => a.use_shape = parse_bool(k, v)?,
                    "use_history" => a.use_history = parse_bool(k, v)?,
                    _ => return Err(unknown(k)),
                }
                true
            }
            "renderer" => {
                let r = &mut self.renderer;
                match field {
                    "stages" => r.stages = parse(k, v)?,
                    "blocks_per_stage" => r.blocks_per_stage = parse(k, v)?,
                    "base_channels" => r.base_channels = parse(k, v)?,
                    "attention_stages" => r.attention_stages = parse_list(k, v)?,
                    "adain_mlp_layers" => r.adain_mlp_layers = parse(k, v)?,
                    "adain_hidden" => r.adain_hidden = parse(k, v)?,
                    "attn_heads" => r.attn_heads = parse(k, v)?,
                    "alignment" => r.alignment = v.trim().parse::<AlignmentKind>()?,
                    "mask" => self.mask = v.trim().parse()?,
                    "mask_dilation" => self.mask_dilation = parse(k, v)?,
                    "disc_channels" => self.disc_channels = parse(k, v)?,
                    _ => return Err(unknown(k)),
                }
                true
            }
            "loss" => {
                let l = &mut self.loss;
                match field {
                    "pixel" => l.pixel = parse(k, v)?,
                    "perceptual" => l.perceptual = parse(k, v)?,
                    "adversarial" => l.adversarial = parse(k, v)?,
                    "teeth" => l.teeth = parse(k, v)?,
                    _ => return Err(unknown(k)),
                }
                true
            }
            "train_a2e" => set_train(&mut self.train_a2e, field, k, v)?,
            "train_e2f" => set_train(&mut self.train_e2f, field, k, v)?,
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(unknown(k))
        }
    }

    /// Applies `key = value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![("seed".into(), self.seed.to_string())];
        for (k, v) in self.data.to_pairs() {
            if k != "global_seed" {
                out.push((format!("data.{k}"), v));
            }
        }
        out.push(("data.clips".into(), self.clips.to_string()));
        out.push(("data.frames".into(), self.frames.to_string()));
        let a = &self.a2e;
        let mut p = |k: &str, v: String| out.push((k.to_string(), v));
        p("a2e.audio_len", a.audio_len.to_string());
        p("a2e.history", a.history.to_string());
        p("a2e.frames", a.frames.to_string());
        p("a2e.latent_dim", a.latent_dim.to_string());
        p("a2e.heads", a.heads.to_string());
        p("a2e.enc_layers", a.enc_layers.to_string());
        p("a2e.dec_layers", a.dec_layers.to_string());
        p("a2e.ffn_dim", a.ffn_dim.to_string());
        p("a2e.vertex_loss_weight", a.vertex_loss_weight.to_string());
        p("a2e.pe_period", a.pe_period.to_string());
        p("a2e.query_pos_encoding", a.query_pos_encoding.to_string());
        p("a2e.use_shape", a.use_shape.to_string());
        p("a2e.use_history", a.use_history.to_string());
        let r = &self.renderer;
        p("renderer.stages", r.stages.to_string());
        p("renderer.blocks_per_stage", r.blocks_per_stage.to_string());
        p("renderer.base_channels", r.base_channels.to_string());
        let st: Vec<String> = r.attention_stages.iter().map(usize::to_string).collect();
        p("renderer.attention_stages", st.join(","));
        p("renderer.adain_mlp_layers", r.adain_mlp_layers.to_string());
        p("renderer.adain_hidden", r.adain_hidden.to_string());
        p("renderer.attn_heads", r.attn_heads.to_string());
        p("renderer.alignment", r.alignment.to_string());
        p("renderer.mask", self.mask.to_string());
        p("renderer.mask_dilation", self.mask_dilation.to_string());
        p("renderer.disc_channels", self.disc_channels.to_string());
        let l = &self.loss;
        p("loss.pixel", l.pixel.to_string());
        p("loss.perceptual", l.perceptual.to_string());
        p("loss.adversarial", l.adversarial.to_string());
        p("loss.teeth", l.teeth.to_string());
        train_pairs("train_a2e", &self.train_a2e, &mut out);
        train_pairs("train_e2f", &self.train_e2f, &mut out);
        out
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Data config with the global seed filled in.
    pub fn synth(&self) -> SynthConfig {
        SynthConfig { global_seed: self.seed, ..self.data.clone() }
    }

    /// Transformer config with dimensions taken from the data section.
    pub fn a2e_config(&self) -> A2EConfig {
        A2EConfig {
            audio_dim: self.data.audio_dim,
            shape_dim: self.data.shape_dim,
            expr_dim: self.data.expr_dim,
            init_seed: self.seed,
            ..self.a2e.clone()
        }
    }

    pub fn renderer_config(&self) -> RendererConfig {
        RendererConfig {
            height: self.data.height,
            width: self.data.width,
            shape_dim: self.data.shape_dim,
            expr_dim: self.data.expr_dim,
            init_seed: self.seed,
            ..self.renderer.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.a2e_config().validate()?;
        self.renderer_config().validate()?;
        self.loss.validate()?;
        self.train_a2e.validate()?;
        self.train_e2f.validate()?;
        if self.clips == 0 || self.frames == 0 {
            return Err(Error::Config("data.clips and data.frames must be positive".into()));
        }
        Ok(())
    }
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key `{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("renderer.alignment", "flow").unwrap();
        c.set("renderer.attention_stages", "0").unwrap();
        c.set("a2e.use_shape", "false").unwrap();
        c.set("train_e2f.lr", "0.002").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut c = RunConfig::default();
        let e = c.set("a2e.latnt_dim", "3").unwrap_err().to_string();
        assert!(e.contains("a2e.latnt_dim"), "{e}");
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.set("seed", "x").is_err());
    }
}
