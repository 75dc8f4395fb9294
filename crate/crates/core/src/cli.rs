//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 I/O or format error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::AlignmentKind;
use crate::bench::bench_suite;
use crate::checkpoint::{load_a2e, load_e2f, save_a2e, save_e2f, write_report};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_a2e, evaluate_e2f, evaluate_lmd, infer_clip, ExprSource, InferOptions};
use crate::synth::Dataset;
use crate::train::{train_a2e, train_e2f, E2FSetup};
use crate::verify::Suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// File name of the effective configuration written into output directories.
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "realtalk", version, about = "Audio-driven talking-face pipeline on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train_a2e.iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            run.apply_override(kv)?;
        }
        Ok(run)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        clips: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the audio-to-expression transformer.
    TrainA2e {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the expression-to-face renderer.
    TrainE2f {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render a clip from its audio with trained checkpoints.
    Infer {
        #[arg(long)]
        a2e: PathBuf,
        #[arg(long)]
        e2f: PathBuf,
        /// Dataset directory holding the clip.
        #[arg(long)]
        clip: PathBuf,
        /// Clip index inside the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the clip's ground-truth expressions instead of predictions.
        #[arg(long)]
        gt_expr: bool,
    },
    /// Parameter counts and forward latency of renderer variants.
    Bench {
        /// fia, flow, deformation or all.
        #[arg(long, default_value = "all")]
        alignment: String,
        /// Comma-separated residual block counts.
        #[arg(long, default_value = "1,2,3")]
        blocks: String,
        /// Square image size.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run oracle suites; exits 1 on any failure.
    Verify {
        /// rasterizer, attention, gradient or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionMismatch(_) => EXIT_USAGE,
        Error::Format(_) | Error::Truncated(_) | Error::Io { .. } => EXIT_IO,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo_config(dir: &Path, run: &RunConfig) -> Result<()> {
    create_dir(dir)?;
    let p = dir.join(CONFIG_ECHO);
    fs::write(&p, run.to_text()).map_err(|e| Error::io(&p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Dataset and the run config with its data section taken from the dataset.
fn load_data(path: &Path, mut run: RunConfig) -> Result<(Dataset, RunConfig)> {
    let data = Dataset::read(path)?;
    run.data = crate::synth::SynthConfig { global_seed: run.data.global_seed, ..data.cfg.clone() };
    run.clips = data.clips.len();
    run.frames = data.clips.first().map_or(run.frames, |c| c.n_frames());
    run.validate()?;
    Ok((data, run))
}

/// Held-out clips that follow the training clips of the same dataset seed.
fn heldout(data: &Dataset, run: &RunConfig) -> Result<Dataset> {
    let count = (data.clips.len() / 4).max(1);
    Dataset::generate(&data.cfg, data.clips.len() as u64, count, run.frames)
}

fn pair<T: ToString>(k: &str, v: T) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Runs a parsed command and returns the exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData { seed, clips, frames, out, cfg } => {
            let mut run = cfg.load()?;
            if let Some(s) = seed {
                run.seed = s;
            }
            if let Some(c) = clips {
                run.clips = c;
            }
            if let Some(f) = frames {
                run.frames = f;
            }
            run.validate()?;
            let data = Dataset::generate(&run.synth(), 0, run.clips, run.frames)?;
            data.write(&out)?;
            echo_config(&out, &run)?;
            log::info!("wrote {} clips of {} frames to {}", run.clips, run.frames, out.display());
            Ok(EXIT_OK)
        }
        Command::TrainA2e { data, out, cfg } => {
            let (data, run) = load_data(&data, cfg.load()?)?;
            echo_config(&out, &run)?;
            let tc = run.train_a2e.clone();
            let (model, curve) = train_a2e(&data, &run.a2e_config(), &tc, &mut |step, m| {
                if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step < tc.iterations {
                    save_a2e(&out.join(format!("checkpoint_{step:07}")), m, &run, step)?;
                }
                Ok(())
            })?;
            save_a2e(&out.join("checkpoint"), &model, &run, tc.iterations)?;
            write_text(&out.join("loss.csv"), &curve.to_csv())?;
            let held = heldout(&data, &run)?;
            let m = evaluate_a2e(&model, &held, &model.cfg, run.seed)?;
            let lmd = evaluate_lmd(&model, &held, &model.cfg, run.seed)?;
            write_report(
                &out.join("metrics.txt"),
                &[
                    pair("expression_error", m.expression_error),
                    pair("mouth_vertex_error", m.mouth_vertex_error),
                    pair("lmd", lmd),
                    pair("frames", m.frames),
                ],
            )?;
            Ok(EXIT_OK)
        }
        Command::TrainE2f { data, out, cfg } => {
            let (data, run) = load_data(&data, cfg.load()?)?;
            echo_config(&out, &run)?;
            let tc = run.train_e2f.clone();
            let setup =
                E2FSetup { mask: run.mask, dilation: run.mask_dilation, loss: run.loss, disc_channels: run.disc_channels };
            let trained = train_e2f(&data, &run.renderer_config(), &tc, &setup, &mut |step, r, d| {
                if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step < tc.iterations {
                    save_e2f(&out.join(format!("checkpoint_{step:07}")), r, d, &run, step)?;
                }
                Ok(())
            })?;
            save_e2f(&out.join("checkpoint"), &trained.renderer, &trained.discriminator, &run, tc.iterations)?;
            write_text(&out.join("loss.csv"), &trained.curve.to_csv())?;
            let held = heldout(&data, &run)?;
            let frames: Vec<(usize, usize)> =
                (0..held.clips.len()).flat_map(|c| (0..run.frames).step_by(4).map(move |t| (c, t))).collect();
            let m = evaluate_e2f(&trained.renderer, &held, run.mask, run.mask_dilation, &frames)?;
            write_report(
                &out.join("metrics.txt"),
                &[pair("masked_l1", m.masked_l1), pair("union_l1", m.union_l1), pair("frames", m.frames)],
            )?;
            Ok(EXIT_OK)
        }
        Command::Infer { a2e, e2f, clip, index, out, seed, gt_expr } => {
            let (a2e_model, run, _) = load_a2e(&a2e)?;
            let (renderer, _, e2f_run, _) = load_e2f(&e2f)?;
            let (data, _) = load_data(&clip, e2f_run.clone())?;
            let sample = data
                .clips
                .get(index)
                .ok_or_else(|| Error::InvalidArgument(format!("clip index {index} beyond {} clips", data.clips.len())))?;
            let opts = InferOptions {
                seed,
                mask: e2f_run.mask,
                dilation: e2f_run.mask_dilation,
                expr: if gt_expr { ExprSource::GroundTruth } else { ExprSource::Predicted },
            };
            let res = infer_clip(&a2e_model, &renderer, &data, sample, &opts)?;
            echo_config(&out, &e2f_run)?;
            write_text(&out.join("a2e_config.txt"), &run.to_text())?;
            for (i, (f, m)) in res.frames.iter().zip(&res.masks).enumerate() {
                f.write_ppm(&out.join(format!("frame_{i:04}.ppm")))?;
                m.write_pgm(&out.join(format!("mask_{i:04}.pgm")))?;
            }
            let truth: Vec<f64> = (0..res.frames.len()).flat_map(|t| sample.track.expr_row(t).to_vec()).collect();
            let err = res.expr.data().iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / res.frames.len() as f64;
            write_report(&out.join("report.txt"), &[pair("frames", res.frames.len()), pair("expression_error", err)])?;
            Ok(EXIT_OK)
        }
        Command::Bench { alignment, blocks, size, iters, warmup, out, cfg } => {
            let run = cfg.load()?;
            let kinds: Vec<AlignmentKind> =
                if alignment == "all" { AlignmentKind::ALL.to_vec() } else { vec![alignment.parse()?] };
            let blocks: Vec<usize> = blocks
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad block count `{s}`"))))
                .collect::<Result<_>>()?;
            let mut base = run.renderer_config();
            base.height = size;
            base.width = size;
            base.validate()?;
            let report = bench_suite(&base, &kinds, &blocks, 1, warmup, iters)?;
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                echo_config(dir, &run)?;
            }
            report.write(&out)?;
            for r in &report.rows {
                println!("{:<16} params {:>9}  median {:>9.3} ms  std {:>7.3} ms", r.config, r.params, r.median_ms, r.std_ms);
            }
            println!("harness overhead {:.6} ms", report.overhead_ms);
            Ok(EXIT_OK)
        }
        Command::Verify { suite, seed } => {
            let suites: Vec<Suite> = if suite == "all" { Suite::ALL.to_vec() } else { vec![suite.parse()?] };
            let mut ok = true;
            for s in suites {
                let r = s.run(seed)?;
                print!("{r}");
                ok &= r.passed();
            }
            Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
