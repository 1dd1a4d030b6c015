//! YIN fundamental-frequency tracking.
//!
//! Per frame: the squared-difference function `d(τ)` over a half-window
//! integration span, its cumulative-mean normalisation `d'(τ)`, the first dip
//! below [`YIN_THRESHOLD`] followed down to its local minimum, and parabolic
//! interpolation around that minimum. Frames with no dip, negligible energy,
//! or an estimate outside [`PITCH_MIN_HZ`, `PITCH_MAX_HZ`] are unvoiced (0 Hz).

use super::FrameGrid;
use crate::audio_io::AudioClip;
use crate::error::Result;

pub const PITCH_MIN_HZ: f64 = 50.0;
pub const PITCH_MAX_HZ: f64 = 2000.0;
/// Aperiodicity threshold on the normalised difference function.
pub const YIN_THRESHOLD: f64 = 0.15;

/// Mean-square level below which a frame is treated as silent.
const SILENCE_POWER: f64 = 1e-8;

pub fn pitch_track(clip: &AudioClip, grid: &FrameGrid) -> Result<Vec<f64>> {
    grid.check(clip)?;
    Ok(yin_frames(clip, grid))
}

pub(crate) fn yin_frames(clip: &AudioClip, grid: &FrameGrid) -> Vec<f64> {
    let sr = grid.sample_rate as f64;
    let span = grid.win_samples / 2;
    let tau_max = ((sr / PITCH_MIN_HZ).floor() as usize).min(span);
    let tau_min = ((sr / PITCH_MAX_HZ).floor() as usize).max(2);
    let mut frame = vec![0.0; grid.win_samples];
    let mut diff = vec![0.0; tau_max + 1];
    (0..grid.n_frames(clip.len()))
        .map(|f| {
            grid.frame_into(clip.samples(), f, &mut frame);
            let power = frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64;
            if power < SILENCE_POWER || tau_max <= tau_min + 1 {
                return 0.0;
            }
            yin_frame(&frame, span, tau_min, tau_max, &mut diff)
                .map(|period| sr / period)
                .filter(|hz| (PITCH_MIN_HZ..=PITCH_MAX_HZ).contains(hz))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Refined period in samples, or `None` when the frame is aperiodic.
fn yin_frame(x: &[f64], span: usize, tau_min: usize, tau_max: usize, cmnd: &mut [f64]) -> Option<f64> {
    cmnd[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=tau_max {
        let d: f64 = x[..span]
            .iter()
            .zip(&x[tau..tau + span])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        running += d;
        cmnd[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
    }
    let mut tau = (tau_min..tau_max).find(|&t| cmnd[t] < YIN_THRESHOLD)?;
    while tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau] {
        tau += 1;
    }
    let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
    Some(tau as f64 + shift.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(len: usize, f: impl Fn(f64) -> f64) -> AudioClip {
        AudioClip::new((0..len).map(|i| f(i as f64 / 16_000.0) as f32).collect(), 16_000).unwrap()
    }

    fn voiced(track: &[f64]) -> Vec<f64> {
        track.iter().copied().filter(|&v| v > 0.0).collect()
    }

    #[test]
    fn sine_440_tracks_within_two_percent() {
        let clip = tone(16_000, |t| 0.5 * (2.0 * PI * 440.0 * t).sin());
        let p = pitch_track(&clip, &FrameGrid::default()).unwrap();
        let v = voiced(&p);
        assert_eq!(v.len(), p.len());
        assert!(v.iter().all(|f| (f / 440.0 - 1.0).abs() < 0.02), "{v:?}");
    }

    #[test]
    fn sawtooth_220_has_no_octave_error() {
        let clip = tone(16_000, |t| 0.5 * (2.0 * ((220.0 * t) % 1.0) - 1.0));
        let v = voiced(&pitch_track(&clip, &FrameGrid::default()).unwrap());
        assert!(!v.is_empty());
        assert!(v.iter().all(|f| (f / 220.0 - 1.0).abs() < 0.02), "{v:?}");
    }

    #[test]
    fn silence_is_unvoiced() {
        let p = pitch_track(&AudioClip::silence(8000, 16_000), &FrameGrid::default()).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let clip = AudioClip::new((0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000)
            .unwrap();
        let p = pitch_track(&clip, &FrameGrid::default()).unwrap();
        assert!(voiced(&p).len() * 10 < p.len());
    }
}
