//! The four time-varying control signals and their training-time transforms.
//!
//! All extractors share one [`FrameGrid`]: frame `f` is centred on sample
//! `f * hop`, spans `win` samples, and reads past either edge by reflection,
//! which yields `1 + len / hop` frames for a clip of `len` samples.

mod apcs;
mod pitch;
pub(crate) mod spectral;
mod transform;

pub use apcs::{read_apcs, write_apcs, APCS_TRACKS};
pub use pitch::{pitch_track, PITCH_MAX_HZ, PITCH_MIN_HZ, YIN_THRESHOLD};
pub use spectral::{mfcc13, rms_loudness, spectral_centroid, MFCC_FLOOR, N_MEL, N_MFCC};
pub use transform::{
    denormalize_controls, median_filter, normalize_controls, random_median_filter, resample_controls,
    Affine, ControlStats,
};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

/// Analysis framing shared by every extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGrid {
    pub win_samples: usize,
    pub hop_samples: usize,
    pub sample_rate: u32,
}

impl Default for FrameGrid {
    fn default() -> Self {
        Self {
            win_samples: 1024,
            hop_samples: 256,
            sample_rate: crate::audio_io::DEFAULT_SAMPLE_RATE,
        }
    }
}

impl FrameGrid {
    pub fn new(win_samples: usize, hop_samples: usize, sample_rate: u32) -> Result<Self> {
        let grid = Self {
            win_samples,
            hop_samples,
            sample_rate,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_samples == 0 || self.hop_samples > self.win_samples {
            return Err(Error::InvalidArgument(format!(
                "hop {} must be in 1..={}",
                self.hop_samples, self.win_samples
            )));
        }
        if !self.win_samples.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "window {} is not a power of two",
                self.win_samples
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_samples as f64
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop_samples
    }

    /// Copies frame `f` of `x` into `out` (length `win_samples`).
    pub(crate) fn frame_into(&self, x: &[f32], f: usize, out: &mut [f64]) {
        let start = (f * self.hop_samples) as isize - (self.win_samples / 2) as isize;
        for (j, o) in out.iter_mut().enumerate() {
            *o = x[reflect(start + j as isize, x.len())] as f64;
        }
    }

    fn check(&self, clip: &AudioClip) -> Result<()> {
        self.validate()?;
        if clip.is_empty() {
            return Err(Error::InvalidArgument("clip is empty".into()));
        }
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "clip rate {} Hz does not match grid rate {} Hz",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(mut i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let n = len as isize;
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Per-frame loudness, pitch, centroid and 13 MFCCs on one frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignals {
    /// Linear RMS amplitude.
    pub loudness: Vec<f64>,
    /// Fundamental frequency in Hz; exactly 0 marks an unvoiced frame.
    pub pitch_hz: Vec<f64>,
    pub centroid_hz: Vec<f64>,
    pub mfcc: Vec<[f64; N_MFCC]>,
    pub frame_rate: f64,
}

/// Width of one concatenated control row: loudness, pitch, centroid, 13 MFCCs.
pub const CONTROL_CHANNELS: usize = 3 + N_MFCC;

impl ControlSignals {
    pub fn n_frames(&self) -> usize {
        self.loudness.len()
    }

    /// Checks that the four tracks agree in length and hold finite values.
    pub fn validate(&self) -> Result<()> {
        let n = self.loudness.len();
        for (name, len) in [
            ("pitch", self.pitch_hz.len()),
            ("centroid", self.centroid_hz.len()),
            ("mfcc", self.mfcc.len()),
        ] {
            if len != n {
                return Err(Error::shape(name, n, len));
            }
        }
        let all_finite = self
            .loudness
            .iter()
            .chain(&self.pitch_hz)
            .chain(&self.centroid_hz)
            .chain(self.mfcc.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite || !(self.frame_rate > 0.0) {
            return Err(Error::InvalidArgument("control signals contain non-finite values".into()));
        }
        Ok(())
    }

    /// Frame-major rows in the fixed channel order used by the projection.
    pub fn rows(&self) -> Vec<[f64; CONTROL_CHANNELS]> {
        (0..self.n_frames())
            .map(|f| {
                let mut row = [0.0; CONTROL_CHANNELS];
                row[0] = self.loudness[f];
                row[1] = self.pitch_hz[f];
                row[2] = self.centroid_hz[f];
                row[3..].copy_from_slice(&self.mfcc[f]);
                row
            })
            .collect()
    }

    pub fn from_rows(rows: &[[f64; CONTROL_CHANNELS]], frame_rate: f64) -> Self {
        Self {
            loudness: rows.iter().map(|r| r[0]).collect(),
            pitch_hz: rows.iter().map(|r| r[1]).collect(),
            centroid_hz: rows.iter().map(|r| r[2]).collect(),
            mfcc: rows
                .iter()
                .map(|r| {
                    let mut m = [0.0; N_MFCC];
                    m.copy_from_slice(&r[3..]);
                    m
                })
                .collect(),
            frame_rate,
        }
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let r = start..start + len;
        Self {
            loudness: self.loudness[r.clone()].to_vec(),
            pitch_hz: self.pitch_hz[r.clone()].to_vec(),
            centroid_hz: self.centroid_hz[r.clone()].to_vec(),
            mfcc: self.mfcc[r].to_vec(),
            frame_rate: self.frame_rate,
        }
    }

    /// Every value rounded through `f32`, i.e. what an APCS file stores.
    pub fn quantized_f32(&self) -> Self {
        let q = |v: &Vec<f64>| v.iter().map(|&x| x as f32 as f64).collect();
        Self {
            loudness: q(&self.loudness),
            pitch_hz: q(&self.pitch_hz),
            centroid_hz: q(&self.centroid_hz),
            mfcc: self.mfcc.iter().map(|m| m.map(|x| x as f32 as f64)).collect(),
            frame_rate: self.frame_rate as f32 as f64,
        }
    }
}

/// Runs all four extractors on `grid`.
pub fn extract_controls(clip: &AudioClip, grid: &FrameGrid) -> Result<ControlSignals> {
    grid.check(clip)?;
    let spec = spectral::Spectrogram::new(clip, grid);
    let controls = ControlSignals {
        loudness: spectral::rms_frames(clip, grid),
        pitch_hz: pitch::yin_frames(clip, grid),
        centroid_hz: spec.centroid(),
        mfcc: spec.mfcc(),
        frame_rate: grid.frame_rate(),
    };
    controls.validate()?;
    Ok(controls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-7, 1), 0);
        // longer than the signal: keeps bouncing
        assert_eq!(reflect(9, 3), 1);
    }

    #[test]
    fn one_second_at_hop_256_gives_63_frames_everywhere() {
        let clip = AudioClip::new(
            (0..16_000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(),
            16_000,
        )
        .unwrap();
        let c = extract_controls(&clip, &FrameGrid::default()).unwrap();
        assert_eq!(c.loudness.len(), 63);
        assert_eq!(c.pitch_hz.len(), 63);
        assert_eq!(c.centroid_hz.len(), 63);
        assert_eq!(c.mfcc.len(), 63);
        assert_eq!(c.frame_rate, 62.5);
    }

    #[test]
    fn extract_is_the_tuple_of_the_individual_extractors() {
        let clip = AudioClip::new(
            (0..5000).map(|i| ((i as f32 * 0.11).sin() + (i as f32 * 0.031).cos()) * 0.2).collect(),
            16_000,
        )
        .unwrap();
        let g = FrameGrid::default();
        let c = extract_controls(&clip, &g).unwrap();
        assert_eq!(c.loudness, rms_loudness(&clip, &g).unwrap());
        assert_eq!(c.pitch_hz, pitch_track(&clip, &g).unwrap());
        assert_eq!(c.centroid_hz, spectral_centroid(&clip, &g).unwrap());
        assert_eq!(c.mfcc, mfcc13(&clip, &g).unwrap());
    }

    #[test]
    fn silence_extracts_to_zeros_and_the_mfcc_floor() {
        let clip = AudioClip::silence(4000, 16_000);
        let c = extract_controls(&clip, &FrameGrid::default()).unwrap();
        assert!(c.loudness.iter().all(|&v| v == 0.0));
        assert!(c.pitch_hz.iter().all(|&v| v == 0.0));
        assert!(c.centroid_hz.iter().all(|&v| v == 0.0));
        let c0 = MFCC_FLOOR.ln() * (N_MEL as f64).sqrt();
        for m in &c.mfcc {
            assert!((m[0] - c0).abs() < 1e-9);
            assert!(m[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn grid_rejects_bad_framing() {
        assert!(FrameGrid::new(1000, 256, 16_000).is_err());
        assert!(FrameGrid::new(1024, 0, 16_000).is_err());
        assert!(FrameGrid::new(1024, 2048, 16_000).is_err());
        assert!(FrameGrid::new(512, 512, 16_000).is_ok());
    }

    #[test]
    fn empty_and_mismatched_clips_are_rejected() {
        let g = FrameGrid::default();
        assert!(extract_controls(&AudioClip::silence(0, 16_000), &g).is_err());
        assert!(extract_controls(&AudioClip::silence(100, 8_000), &g).is_err());
    }
}
