//! Lossless latent codec: every block of 64 consecutive samples becomes one
//! 64-channel latent frame.

use ndarray::Array2;

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

/// Latent channel count.
pub const LATENT_CHANNELS: usize = 64;

/// Sequence of 64-channel latent frames (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq {
    frames: Array2<f64>,
    sample_rate: u32,
    orig_len: usize,
}

impl LatentSeq {
    pub fn new(frames: Array2<f64>, sample_rate: u32, orig_len: usize) -> Result<Self> {
        if frames.ncols() != LATENT_CHANNELS {
            return Err(Error::shape("latent channels", LATENT_CHANNELS, frames.ncols()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent frames contain non-finite values".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            frames,
            sample_rate,
            orig_len,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn orig_len(&self) -> usize {
        self.orig_len
    }

    /// Sets the sample count kept by [`decode`]; must fit in the frames.
    pub fn set_orig_len(&mut self, orig_len: usize) -> Result<()> {
        let capacity = self.n_frames() * LATENT_CHANNELS;
        if orig_len > capacity {
            return Err(Error::shape("original length", format!("<= {capacity}"), orig_len));
        }
        self.orig_len = orig_len;
        Ok(())
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn latent_rate(&self) -> f64 {
        latent_rate(self.sample_rate)
    }
}

pub fn latent_rate(sample_rate: u32) -> f64 {
    sample_rate as f64 / LATENT_CHANNELS as f64
}

/// Latent frames needed for `n_samples` samples.
pub fn latent_frames_for(n_samples: usize) -> usize {
    n_samples.div_ceil(LATENT_CHANNELS)
}

/// Waveform <-> latent mapping. [`FrameStack`] is the exact default.
pub trait LatentCodec {
    fn encode(&self, clip: &AudioClip) -> Result<LatentSeq>;
    fn decode(&self, latent: &LatentSeq) -> Result<AudioClip>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameStack;

impl LatentCodec for FrameStack {
    fn encode(&self, clip: &AudioClip) -> Result<LatentSeq> {
        encode(clip)
    }

    fn decode(&self, latent: &LatentSeq) -> Result<AudioClip> {
        decode(latent)
    }
}

/// Zero-pads to a multiple of 64 samples and stacks blocks into frames.
pub fn encode(clip: &AudioClip) -> Result<LatentSeq> {
    if clip.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty clip".into()));
    }
    let n = latent_frames_for(clip.len());
    let mut frames = Array2::zeros((n, LATENT_CHANNELS));
    for (dst, &s) in frames.iter_mut().zip(clip.samples()) {
        *dst = s as f64;
    }
    LatentSeq::new(frames, clip.sample_rate(), clip.len())
}

/// Concatenates frames and truncates to the original length. Samples are
/// clamped to [-1, 1], which leaves encoded clips untouched.
pub fn decode(latent: &LatentSeq) -> Result<AudioClip> {
    let capacity = latent.n_frames() * LATENT_CHANNELS;
    if latent.orig_len > capacity {
        return Err(Error::InvalidArgument(format!(
            "orig_len {} exceeds {} frames x {LATENT_CHANNELS}",
            latent.orig_len,
            latent.n_frames()
        )));
    }
    let samples = latent
        .frames
        .iter()
        .take(latent.orig_len)
        .map(|&v| v.clamp(-1.0, 1.0) as f32)
        .collect();
    AudioClip::new(samples, latent.sample_rate)
}
