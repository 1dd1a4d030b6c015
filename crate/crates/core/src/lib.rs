//! Controllable Foley synthesis at desk scale.
//!
//! Four time-varying acoustic controls (loudness, pitch, spectral centroid and
//! MFCC timbre) are extracted from reference audio, projected to the latent
//! channel width and added to the noisy latents of a small diffusion
//! transformer. The transformer is adapted with LoRA on its attention query
//! and value projections and sampled with three nested guidance scales.
//!
//! Module map:
//! - [`audio_io`]: WAV codec, procedural Foley generators, dataset manifests
//! - [`features`]: control-signal extraction and training-time transforms
//! - [`codec`]: lossless 64-channel latent codec
//! - [`conditioning`]: text embedder, control projection, fusion, dropout masks
//! - [`dit`]: the diffusion transformer with hand-written backward pass
//! - [`lora`]: low-rank adapters
//! - [`diffusion`]: noise schedule, training loop, guidance and samplers
//! - [`eval`]: Fréchet distance, similarity, control adherence, ablation
//! - [`cli`]: the `apalette` command line

pub mod audio_io;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod conditioning;
pub mod diffusion;
pub mod dit;
mod error;
pub mod eval;
pub mod features;
pub mod lora;
mod nn;

pub use error::{Error, Result};
