//! Two-stage audio-driven talking-face pipeline on a synthetic morphable face
//! model: an audio-to-expression transformer and an expression-to-face
//! renderer with a learnable 3D-prior mask.

pub mod audio2expr;
pub mod baselines;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod mask;
pub mod morphable;
pub mod nn;
pub mod optim;
pub mod raster;
pub mod renderer;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` derived from `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
