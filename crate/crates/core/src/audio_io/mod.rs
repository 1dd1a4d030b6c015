//! Raw audio: the [`AudioClip`] buffer, WAV codec, procedural Foley
//! generators and dataset manifests.

mod dataset;
mod synth;
mod wav;

pub use dataset::{
    build_dataset, build_dataset_with, caption_for, dataset_specs, DatasetEntry, DatasetManifest, DatasetOptions,
    MANIFEST_FILE,
};
pub use synth::{synth_clip, SynthKind, SynthParams, SynthSpec};
pub use wav::{read_wav, write_wav, WavEncoding};

use crate::error::{Error, Result};

/// Default sample rate of the whole pipeline.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Multiplies every sample by `gain`, clamping to [-1, 1].
    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| (s * gain).clamp(-1.0, 1.0))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}
