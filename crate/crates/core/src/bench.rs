//! Parameter counts and forward latency of renderer variants.

use std::fs;
use std::path::Path;
use std::time::Instant;

use autograd::Tensor;

use crate::baselines::AlignmentKind;
use crate::error::{Error, Result};
use crate::renderer::{RenderBatch, Renderer, RendererConfig, IMAGE_CHANNELS};
use crate::seeded_rng;

pub const MIN_WARMUP: usize = 5;
pub const MIN_ITERS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub iters: usize,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        let n = ms.len();
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        let mean = ms.iter().sum::<f64>() / n.max(1) as f64;
        let var = ms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n.max(1) as f64;
        LatencyStats { median_ms: median, mean_ms: mean, std_ms: var.sqrt(), iters: n }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub config: String,
    pub params: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub iters: usize,
    /// `BxCxHxW`
    pub input_shape: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Median cost of timing an empty closure.
    pub overhead_ms: f64,
}

const CSV_HEADER: &str = "config,params,median_ms,mean_ms,std_ms,iters,input_shape";

impl BenchReport {
    pub fn row(&self, config: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    /// Rows plus a final `overhead` row for the empty-closure baseline.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.config, r.params, r.median_ms, r.mean_ms, r.std_ms, r.iters, r.input_shape
            ));
        }
        s.push_str(&format!("overhead,0,{},{},0,0,-\n", self.overhead_ms, self.overhead_ms));
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format("bench CSV header missing".into()));
        }
        let mut report = BenchReport::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("bench CSV row `{line}` has {} fields", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| Error::Format(format!("bad number `{}`", f[i])));
            let int = |i: usize| f[i].parse::<usize>().map_err(|_| Error::Format(format!("bad integer `{}`", f[i])));
            if f[0] == "overhead" {
                report.overhead_ms = num(2)?;
                continue;
            }
            report.rows.push(BenchRow {
                config: f[0].to_string(),
                params: int(1)?,
                median_ms: num(2)?,
                mean_ms: num(3)?,
                std_ms: num(4)?,
                iters: int(5)?,
                input_shape: f[6].to_string(),
            });
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Exact number of trainable scalars of a renderer.
pub fn count_params(cfg: &RendererConfig) -> Result<usize> {
    Ok(Renderer::new(cfg.clone())?.num_params())
}

/// Random render inputs for `batch` frames.
pub fn random_batch(cfg: &RendererConfig, batch: usize, seed: u64) -> RenderBatch {
    let mut rng = seeded_rng(seed, 0xbe4c);
    let img = [batch, IMAGE_CHANNELS, cfg.height, cfg.width];
    let mut mask = Tensor::ones([batch, 1, cfg.height, cfg.width]);
    for b in 0..batch {
        for y in cfg.height / 2..cfg.height {
            for x in 0..cfg.width {
                mask.set(&[b, 0, y, x], 0.0);
            }
        }
    }
    RenderBatch {
        source: Tensor::uniform(img, 0.0, 1.0, &mut rng),
        reference: Tensor::uniform(img, 0.0, 1.0, &mut rng),
        mask,
        coeffs: Tensor::randn([batch, cfg.coeff_dim()], 1.0, &mut rng),
    }
}

fn time_ms(f: &mut dyn FnMut() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Times several closures round-robin so slow drifts of the machine hit all
/// of them equally. Warmup runs are discarded.
pub fn time_interleaved(fs: &mut [&mut dyn FnMut() -> Result<()>], warmup: usize, iters: usize) -> Result<Vec<LatencyStats>> {
    let warmup = warmup.max(MIN_WARMUP);
    let iters = iters.max(MIN_ITERS);
    let mut samples = vec![Vec::with_capacity(iters); fs.len()];
    for i in 0..warmup + iters {
        for (k, f) in fs.iter_mut().enumerate() {
            let ms = time_ms(*f)?;
            if i >= warmup {
                samples[k].push(ms);
            }
        }
    }
    Ok(samples.iter().map(|s| LatencyStats::from_samples(s)).collect())
}

/// Forward latency of one renderer configuration.
pub fn time_forward(cfg: &RendererConfig, batch: usize, warmup: usize, iters: usize) -> Result<LatencyStats> {
    let r = Renderer::new(cfg.clone())?;
    let inputs = random_batch(cfg, batch, 0);
    let mut f = || r.render_frames(&inputs).map(|_| ());
    Ok(time_interleaved(&mut [&mut f], warmup, iters)?[0])
}

/// Median cost of the timing harness itself.
pub fn harness_overhead(iters: usize) -> Result<f64> {
    let mut f = || Ok(());
    Ok(time_interleaved(&mut [&mut f], MIN_WARMUP, iters)?[0].median_ms)
}

pub fn config_name(kind: AlignmentKind, blocks: usize) -> String {
    format!("{}-b{blocks}", kind.name())
}

/// Every `(alignment, blocks)` combination on top of `base`, timed together.
pub fn bench_suite(
    base: &RendererConfig,
    kinds: &[AlignmentKind],
    blocks: &[usize],
    batch: usize,
    warmup: usize,
    iters: usize,
) -> Result<BenchReport> {
    let mut cfgs = Vec::new();
    for &k in kinds {
        for &b in blocks {
            cfgs.push((config_name(k, b), RendererConfig { alignment: k, blocks_per_stage: b, ..base.clone() }));
        }
    }
    let renderers: Vec<Renderer> = cfgs.iter().map(|(_, c)| Renderer::new(c.clone())).collect::<Result<_>>()?;
    let inputs = random_batch(base, batch, 0);
    let mut closures: Vec<Box<dyn FnMut() -> Result<()> + '_>> = renderers
        .iter()
        .map(|r| {
            let inputs = &inputs;
            Box::new(move || r.render_frames(inputs).map(|_| ())) as Box<dyn FnMut() -> Result<()>>
        })
        .collect();
    let mut refs: Vec<&mut dyn FnMut() -> Result<()>> = closures.iter_mut().map(|c| c.as_mut() as _).collect();
    let stats = time_interleaved(&mut refs, warmup, iters)?;
    let shape = format!("{batch}x{IMAGE_CHANNELS}x{}x{}", base.height, base.width);
    let rows = cfgs
        .iter()
        .zip(&renderers)
        .zip(stats)
        .map(|(((name, _), r), s)| BenchRow {
            config: name.clone(),
            params: r.num_params(),
            median_ms: s.median_ms,
            mean_ms: s.mean_ms,
            std_ms: s.std_ms,
            iters: s.iters,
            input_shape: shape.clone(),
        })
        .collect();
    Ok(BenchReport { rows, overhead_ms: harness_overhead(iters)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let s = LatencyStats::from_samples(&[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.mean_ms, 2.5);
        assert!((s.std_ms - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let r = BenchReport {
            rows: vec![BenchRow {
                config: "fia-b2".into(),
                params: 1234,
                median_ms: 1.5,
                mean_ms: 1.625,
                std_ms: 0.1,
                iters: 30,
                input_shape: "1x3x32x32".into(),
            }],
            overhead_ms: 1e-4,
        };
        assert_eq!(BenchReport::from_csv(&r.to_csv()).unwrap(), r);
        assert!(BenchReport::from_csv("nope").is_err());
    }
}
