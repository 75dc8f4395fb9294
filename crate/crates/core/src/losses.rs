//! Renderer losses and the patch discriminator.
//!
//! Every sum is divided by its element count.

use autograd::{Graph, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::seeded_rng;

/// Logit clamp for the adversarial terms.
pub const LOGIT_CLAMP: f64 = 20.0;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct E2FLossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub teeth: f64,
}

impl Default for E2FLossWeights {
    fn default() -> Self {
        E2FLossWeights { pixel: 1.0, perceptual: 1.0, adversarial: 0.1, teeth: 1.0 }
    }
}

impl E2FLossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.pixel, self.perceptual, self.adversarial, self.teeth].iter().all(|w| *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be non-negative".into()))
        }
    }
}

fn check_same(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) == g.shape(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {:?} vs {:?}", g.shape(a), g.shape(b))))
    }
}

/// Mean absolute difference.
pub fn pixel_l1(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    check_same(g, pred, target, "pixel_l1")?;
    let d = g.sub(pred, target);
    let a = g.abs(d);
    Ok(g.mean_all(a))
}

/// L1 restricted to `mask: [B, 1, H, W]`, divided by the number of masked
/// elements (pixels times channels). Zero when the mask is empty.
pub fn teeth_l1(g: &mut Graph, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
    check_same(g, pred, target, "teeth_l1")?;
    let s = g.shape(pred).to_vec();
    if mask.shape() != [s[0], 1, s[2], s[3]] {
        return Err(Error::DimensionMismatch(format!("teeth mask {:?} for images {s:?}", mask.shape())));
    }
    let support = mask.sum() * s[1] as f64;
    if support == 0.0 {
        return Ok(g.scalar(0.0));
    }
    let m = g.constant(mask.clone());
    let d = g.sub(pred, target);
    let d = g.mul(d, m);
    let a = g.abs(d);
    let total = g.sum_all(a);
    Ok(g.mul_scalar(total, 1.0 / support))
}

/// Feature extractor for the perceptual loss. Its parameters are never trained.
pub trait FeatureExtractor {
    fn store(&self) -> &ParamStore;
    /// Feature maps at each layer; the store must already be attached to `g`.
    fn features(&self, g: &mut Graph, x: Var) -> Vec<Var>;
}

/// Frozen random 3-stage convolutional extractor.
#[derive(Debug)]
pub struct RandomConvFeatures {
    pub params: ParamStore,
    layers: Vec<Conv2d>,
}

impl RandomConvFeatures {
    pub fn new(seed: u64, in_channels: usize) -> Self {
        let mut rng = seeded_rng(seed, 0x7667);
        let mut params = ParamStore::new();
        let widths = [8, 16, 32];
        let mut c = in_channels;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Conv2d::new(&mut params, &format!("feat.{i}"), c, w, 3, 2, &mut rng);
                c = w;
                l
            })
            .collect();
        RandomConvFeatures { params, layers }
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn store(&self) -> &ParamStore {
        &self.params
    }

    fn features(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut h = x;
        self.layers
            .iter()
            .map(|l| {
                h = l.forward(g, h);
                h = g.silu(h);
                h
            })
            .collect()
    }
}

/// Sum over layers of the mean absolute feature difference.
pub fn perceptual(g: &mut Graph, net: &dyn FeatureExtractor, pred: Var, target: Var) -> Result<Var> {
    check_same(g, pred, target, "perceptual")?;
    let fp = net.features(g, pred);
    let ft = net.features(g, target);
    let mut total = g.scalar(0.0);
    for (a, b) in fp.into_iter().zip(ft) {
        let d = g.sub(a, b);
        let d = g.abs(d);
        let m = g.mean_all(d);
        total = g.add(total, m);
    }
    Ok(total)
}

/// Four-layer strided patch discriminator producing a logit map.
#[derive(Debug)]
pub struct Discriminator {
    pub params: ParamStore,
    layers: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(seed: u64, in_channels: usize, base: usize) -> Self {
        let mut rng = seeded_rng(seed, 0xd15c);
        let mut params = ParamStore::new();
        let widths = [base, 2 * base, 4 * base];
        let mut c = in_channels;
        let mut layers: Vec<Conv2d> = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Conv2d::new(&mut params, &format!("disc.{i}"), c, w, 3, 2, &mut rng);
                c = w;
                l
            })
            .collect();
        layers.push(Conv2d::new(&mut params, "disc.out", c, 1, 3, 1, &mut rng));
        Discriminator { params, layers }
    }

    /// Logits `[B, 1, H/8, W/8]`; the store must be attached to `g`.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h);
            if i < last {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        h
    }
}

/// `-mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake)))`.
pub fn d_loss_from_logits(g: &mut Graph, real: Var, fake: Var) -> Var {
    let r = g.clamp(real, -LOGIT_CLAMP, LOGIT_CLAMP);
    let f = g.clamp(fake, -LOGIT_CLAMP, LOGIT_CLAMP);
    let nr = g.neg(r);
    let lr = g.softplus(nr);
    let lf = g.softplus(f);
    let a = g.mean_all(lr);
    let b = g.mean_all(lf);
    g.add(a, b)
}

/// Non-saturating generator loss `-mean(log sigmoid(fake))`.
pub fn g_loss_from_logits(g: &mut Graph, fake: Var) -> Var {
    let f = g.clamp(fake, -LOGIT_CLAMP, LOGIT_CLAMP);
    let nf = g.neg(f);
    let l = g.softplus(nf);
    g.mean_all(l)
}

/// Discriminator and generator losses. The discriminator term sees the fake
/// images detached, so it never reaches the generator; the generator term
/// should be built with the discriminator store attached as frozen.
pub fn adversarial_losses(g: &mut Graph, d: &Discriminator, real: Var, fake: Var) -> Result<(Var, Var)> {
    check_same(g, real, fake, "adversarial_losses")?;
    let fake_detached = g.detach(fake);
    let lr = d.logits(g, real);
    let lf = d.logits(g, fake_detached);
    let d_loss = d_loss_from_logits(g, lr, lf);
    let lg = d.logits(g, fake);
    let g_loss = g_loss_from_logits(g, lg);
    Ok((d_loss, g_loss))
}

/// The four loss values, in the order pixel, perceptual, adversarial, teeth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct E2FLossValues {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub teeth: f64,
}

pub fn total_e2f(l: &E2FLossValues, w: &E2FLossWeights) -> f64 {
    w.pixel * l.pixel + w.perceptual * l.perceptual + w.adversarial * l.adversarial + w.teeth * l.teeth
}

/// Graph form of [`total_e2f`]. Terms with zero weight are left out.
pub fn total_e2f_graph(g: &mut Graph, terms: [Option<Var>; 4], w: &E2FLossWeights) -> Var {
    let weights = [w.pixel, w.perceptual, w.adversarial, w.teeth];
    let mut total = g.scalar(0.0);
    for (t, wi) in terms.into_iter().zip(weights) {
        if let (Some(t), true) = (t, wi != 0.0) {
            let s = g.mul_scalar(t, wi);
            total = g.add(total, s);
        }
    }
    total
}
