//! Framed spectral analysis: RMS, spectral centroid and MFCCs.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FrameGrid;
use crate::audio_io::AudioClip;
use crate::error::Result;

/// Number of triangular mel filters feeding the cepstrum.
pub const N_MEL: usize = 40;
/// Cepstral coefficients kept per frame.
pub const N_MFCC: usize = 13;
/// Added to mel energies before the log.
pub const MFCC_FLOOR: f64 = 1e-10;

/// Root-mean-square amplitude of each (rectangular) analysis window.
pub fn rms_loudness(clip: &AudioClip, grid: &FrameGrid) -> Result<Vec<f64>> {
    grid.check(clip)?;
    Ok(rms_frames(clip, grid))
}

pub(crate) fn rms_frames(clip: &AudioClip, grid: &FrameGrid) -> Vec<f64> {
    let mut buf = vec![0.0; grid.win_samples];
    (0..grid.n_frames(clip.len()))
        .map(|f| {
            grid.frame_into(clip.samples(), f, &mut buf);
            (buf.iter().map(|x| x * x).sum::<f64>() / buf.len() as f64).sqrt()
        })
        .collect()
}

/// Magnitude-weighted mean frequency of each Hann-windowed frame; 0 for silent frames.
pub fn spectral_centroid(clip: &AudioClip, grid: &FrameGrid) -> Result<Vec<f64>> {
    grid.check(clip)?;
    Ok(Spectrogram::new(clip, grid).centroid())
}

/// First 13 orthonormal DCT-II coefficients of 40 log mel-band energies.
pub fn mfcc13(clip: &AudioClip, grid: &FrameGrid) -> Result<Vec<[f64; N_MFCC]>> {
    grid.check(clip)?;
    Ok(Spectrogram::new(clip, grid).mfcc())
}

/// Magnitude spectra (bins `0..=win/2`) of every Hann-windowed frame.
pub(crate) struct Spectrogram {
    pub mags: Vec<Vec<f64>>,
    pub n_fft: usize,
    pub sample_rate: f64,
}

impl Spectrogram {
    pub fn new(clip: &AudioClip, grid: &FrameGrid) -> Self {
        let n = grid.win_samples;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let window = hann(n);
        let mut frame = vec![0.0; n];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mags = (0..grid.n_frames(clip.len()))
            .map(|f| {
                grid.frame_into(clip.samples(), f, &mut frame);
                for ((b, x), w) in buf.iter_mut().zip(&frame).zip(&window) {
                    *b = Complex::new(x * w, 0.0);
                }
                fft.process(&mut buf);
                buf[..=n / 2].iter().map(|c| c.norm()).collect()
            })
            .collect();
        Self {
            mags,
            n_fft: n,
            sample_rate: grid.sample_rate as f64,
        }
    }

    fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.n_fft as f64
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.mags
            .iter()
            .map(|m| {
                let total: f64 = m.iter().sum();
                if total <= 0.0 {
                    return 0.0;
                }
                m.iter().enumerate().map(|(k, a)| self.bin_hz(k) * a).sum::<f64>() / total
            })
            .collect()
    }

    /// `ln(energy + floor)` per mel band per frame, from the power spectrum.
    pub fn log_mel(&self, n_mels: usize, floor: f64) -> Vec<Vec<f64>> {
        let bank = mel_filterbank(n_mels, self.n_fft, self.sample_rate);
        self.mags
            .iter()
            .map(|m| {
                bank.iter()
                    .map(|filt| {
                        let e: f64 = filt.iter().zip(m).map(|(w, a)| w * a * a).sum();
                        (e + floor).ln()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn mfcc(&self) -> Vec<[f64; N_MFCC]> {
        let dct = dct2_matrix(N_MEL, N_MFCC);
        self.log_mel(N_MEL, MFCC_FLOOR)
            .iter()
            .map(|logs| {
                let mut c = [0.0; N_MFCC];
                for (ck, row) in c.iter_mut().zip(&dct) {
                    *ck = row.iter().zip(logs).map(|(a, b)| a * b).sum();
                }
                c
            })
            .collect()
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters (unit peak) evenly spaced on the mel scale over [0, sr/2].
pub(crate) fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / n_fft as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Rows `0..n_out` of the orthonormal DCT-II matrix of size `n`.
pub(crate) fn dct2_matrix(n: usize, n_out: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, len: usize) -> AudioClip {
        AudioClip::new(
            (0..len)
                .map(|i| (amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn rms_of_constant_is_the_constant() {
        let clip = AudioClip::new(vec![0.5; 3000], 16_000).unwrap();
        let r = rms_loudness(&clip, &FrameGrid::default()).unwrap();
        assert!(r.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn rms_of_silence_is_zero() {
        let r = rms_loudness(&AudioClip::silence(2048, 16_000), &FrameGrid::default()).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rms_of_unit_sine_over_whole_periods() {
        // 500 Hz has a 32-sample period, so every 1024-sample window spans whole periods
        let r = rms_loudness(&sine(500.0, 1.0, 16_000), &FrameGrid::default()).unwrap();
        for v in &r[2..r.len() - 2] {
            assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn centroid_of_silence_is_zero() {
        let c = spectral_centroid(&AudioClip::silence(1000, 16_000), &FrameGrid::default()).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dct_matrix_is_orthonormal() {
        let d = dct2_matrix(N_MEL, N_MEL);
        for i in 0..N_MEL {
            for j in 0..N_MEL {
                let dot: f64 = d[i].iter().zip(&d[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_mel_filter_covers_at_least_one_bin() {
        for filt in mel_filterbank(N_MEL, 1024, 16_000.0) {
            assert!(filt.iter().any(|&w| w > 0.0));
        }
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }
}
