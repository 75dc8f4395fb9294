//! Model checkpoints and flat text reports.
//!
//! A checkpoint is an array directory holding every parameter plus the full
//! run configuration in its header, so it can be rebuilt without other files.

use std::fs;
use std::path::Path;

use autograd::ParamStore;

use crate::audio2expr::A2EModel;
use crate::config::RunConfig;
use crate::container::{Array, ArrayDir};
use crate::error::{Error, Result};
use crate::losses::Discriminator;
use crate::renderer::{Renderer, IMAGE_CHANNELS};

fn push_store(d: &mut ArrayDir, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        d.push(format!("{prefix}.{name}"), Array::from_tensor(t));
    }
}

fn load_store(d: &ArrayDir, prefix: &str, store: &mut ParamStore) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = format!("{prefix}.{}", store.name(id));
        let t = d.get(&name)?.to_tensor()?;
        let p = store.get_mut(id);
        if t.shape() != p.shape() {
            return Err(Error::Format(format!("{name}: stored shape {:?}, model expects {:?}", t.shape(), p.shape())));
        }
        *p = t;
    }
    let expected = store.len();
    let stored = d.arrays.iter().filter(|(n, _)| n.starts_with(&format!("{prefix}."))).count();
    if stored != expected {
        return Err(Error::Format(format!("checkpoint has {stored} `{prefix}` arrays, model has {expected}")));
    }
    Ok(())
}

fn header(kind: &str, run: &RunConfig, step: usize) -> ArrayDir {
    let mut d = ArrayDir::new();
    d.set_header("kind", kind);
    d.set_header("step", step);
    for (k, v) in run.pairs() {
        d.set_header(format!("config.{k}"), v);
    }
    d
}

fn read_header(d: &ArrayDir, kind: &str) -> Result<(RunConfig, usize)> {
    match d.header_value("kind") {
        Some(k) if k == kind => {}
        other => return Err(Error::Format(format!("expected a {kind} checkpoint, found kind {other:?}"))),
    }
    let step = d
        .header_value("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("checkpoint step missing".into()))?;
    let mut run = RunConfig::default();
    for (k, v) in &d.header {
        if let Some(key) = k.strip_prefix("config.") {
            run.set(key, v)?;
        }
    }
    Ok((run, step))
}

pub fn save_a2e(dir: &Path, model: &A2EModel, run: &RunConfig, step: usize) -> Result<()> {
    let mut d = header("a2e", run, step);
    push_store(&mut d, "p", &model.params);
    d.write(dir)
}

pub fn load_a2e(dir: &Path) -> Result<(A2EModel, RunConfig, usize)> {
    let d = ArrayDir::read(dir)?;
    let (run, step) = read_header(&d, "a2e")?;
    let mut model = A2EModel::new(run.a2e_config())?;
    load_store(&d, "p", &mut model.params)?;
    Ok((model, run, step))
}

pub fn save_e2f(dir: &Path, renderer: &Renderer, disc: &Discriminator, run: &RunConfig, step: usize) -> Result<()> {
    let mut d = header("e2f", run, step);
    push_store(&mut d, "g", &renderer.params);
    push_store(&mut d, "d", &disc.params);
    d.write(dir)
}

pub fn load_e2f(dir: &Path) -> Result<(Renderer, Discriminator, RunConfig, usize)> {
    let d = ArrayDir::read(dir)?;
    let (run, step) = read_header(&d, "e2f")?;
    let mut renderer = Renderer::new(run.renderer_config())?;
    let mut disc = Discriminator::new(run.train_e2f.seed, IMAGE_CHANNELS, run.disc_channels.max(1));
    load_store(&d, "g", &mut renderer.params)?;
    load_store(&d, "d", &mut disc.params)?;
    Ok((renderer, disc, run, step))
}

/// `key = value` lines.
pub fn report_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn write_report(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    fs::write(path, report_text(pairs)).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format(format!("report line `{l}` is not key = value")))
        })
        .collect()
}
