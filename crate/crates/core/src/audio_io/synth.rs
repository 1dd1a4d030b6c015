//! Procedural Foley generators used as a synthetic training corpus.
//!
//! Every generator is a pure function of its [`SynthSpec`]: the seed feeds a
//! ChaCha8 stream, so the same spec always renders the same buffer.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SynthKind {
    Footsteps,
    Siren,
    Rain,
    Bark,
    Chirp,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::Footsteps,
        SynthKind::Siren,
        SynthKind::Rain,
        SynthKind::Bark,
        SynthKind::Chirp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Footsteps => "footsteps",
            SynthKind::Siren => "siren",
            SynthKind::Rain => "rain",
            SynthKind::Bark => "bark",
            SynthKind::Chirp => "chirp",
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sound kind `{s}`")))
    }
}

/// Kind-specific generator parameters. Frequencies are in Hz, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthParams {
    /// Periodic decaying noise bursts.
    Footsteps { rate_hz: f64, decay_s: f64 },
    /// Linearly swept sine.
    Siren { f_start: f64, f_end: f64 },
    /// Low-passed noise with a slow swell plus scattered droplets.
    Rain { cutoff_hz: f64, drops_per_s: f64 },
    /// Amplitude-modulated harmonic bursts with a falling glide.
    Bark { f0_hz: f64, count: u32 },
    /// Short rising sweeps.
    Chirp { f_low: f64, f_high: f64, rate_hz: f64 },
}

impl SynthParams {
    pub fn kind(&self) -> SynthKind {
        match self {
            SynthParams::Footsteps { .. } => SynthKind::Footsteps,
            SynthParams::Siren { .. } => SynthKind::Siren,
            SynthParams::Rain { .. } => SynthKind::Rain,
            SynthParams::Bark { .. } => SynthKind::Bark,
            SynthParams::Chirp { .. } => SynthKind::Chirp,
        }
    }

    fn frequencies(&self) -> Vec<f64> {
        match *self {
            SynthParams::Footsteps { .. } => vec![],
            SynthParams::Siren { f_start, f_end } => vec![f_start, f_end],
            SynthParams::Rain { cutoff_hz, .. } => vec![cutoff_hz],
            // the bark's third harmonic still has to sit below Nyquist
            SynthParams::Bark { f0_hz, .. } => vec![f0_hz, 3.0 * f0_hz],
            SynthParams::Chirp { f_low, f_high, .. } => vec![f_low, f_high],
        }
    }

    /// Draws plausible parameters for `kind`.
    pub fn random(kind: SynthKind, rng: &mut impl Rng) -> Self {
        match kind {
            SynthKind::Footsteps => SynthParams::Footsteps {
                rate_hz: rng.random_range(1.5..4.0),
                decay_s: rng.random_range(0.03..0.08),
            },
            SynthKind::Siren => {
                let low = rng.random_range(180.0..350.0);
                let high = rng.random_range(600.0..900.0);
                if rng.random_bool(0.5) {
                    SynthParams::Siren { f_start: low, f_end: high }
                } else {
                    SynthParams::Siren { f_start: high, f_end: low }
                }
            }
            SynthKind::Rain => SynthParams::Rain {
                cutoff_hz: rng.random_range(1500.0..5000.0),
                drops_per_s: rng.random_range(5.0..40.0),
            },
            SynthKind::Bark => SynthParams::Bark {
                f0_hz: rng.random_range(300.0..600.0),
                count: rng.random_range(2..=4),
            },
            SynthKind::Chirp => SynthParams::Chirp {
                f_low: rng.random_range(900.0..1300.0),
                f_high: rng.random_range(1500.0..1900.0),
                rate_hz: rng.random_range(3.0..7.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub params: SynthParams,
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(params: SynthParams, duration: f64, seed: u64) -> Self {
        Self {
            params,
            duration,
            sample_rate: super::DEFAULT_SAMPLE_RATE,
            seed,
        }
    }

    pub fn kind(&self) -> SynthKind {
        self.params.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for f in self.params.frequencies() {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::InvalidArgument(format!(
                    "frequency {f} Hz outside (0, {nyquist})"
                )));
            }
        }
        Ok(())
    }
}

/// Renders `spec` to a mono clip of `round(duration * sample_rate)` samples.
pub fn synth_clip(spec: &SynthSpec) -> Result<AudioClip> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let len = (spec.duration * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = match spec.params {
        SynthParams::Footsteps { rate_hz, decay_s } => footsteps(len, sr, rate_hz, decay_s, &mut rng),
        SynthParams::Siren { f_start, f_end } => siren(len, sr, f_start, f_end, &mut rng),
        SynthParams::Rain { cutoff_hz, drops_per_s } => rain(len, sr, cutoff_hz, drops_per_s, &mut rng),
        SynthParams::Bark { f0_hz, count } => bark(len, sr, f0_hz, count, &mut rng),
        SynthParams::Chirp { f_low, f_high, rate_hz } => chirp(len, sr, f_low, f_high, rate_hz, &mut rng),
    };
    normalize_peak(&mut out, 0.8);
    AudioClip::new(out.into_iter().map(|s| s as f32).collect(), spec.sample_rate)
}

fn normalize_peak(x: &mut [f64], target: f64) {
    let peak = x.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|s| *s *= target / peak);
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// One-pole low-pass coefficient for a cutoff frequency.
fn one_pole(cutoff: f64, sr: f64) -> f64 {
    1.0 - (-2.0 * PI * cutoff / sr).exp()
}

fn siren(len: usize, sr: f64, f0: f64, f1: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dur = len as f64 / sr;
    let fade = (0.005 * sr) as usize;
    // pass-by swell: loudest when the source is closest
    let centre = rng.random_range(0.3..0.7) * dur;
    let width = rng.random_range(0.15..0.3) * dur;
    (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let phase = 2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
            let edge = i.min(len - 1 - i);
            let ramp = if edge < fade { edge as f64 / fade as f64 } else { 1.0 };
            let swell = 0.75 + 0.25 * (-0.5 * ((t - centre) / width).powi(2)).exp();
            ramp * swell * phase.sin()
        })
        .collect()
}

fn footsteps(len: usize, sr: f64, rate: f64, decay: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let period = 1.0 / rate;
    let mut t = rng.random_range(0.0..0.3 * period);
    let lp = one_pole(900.0, sr);
    let thump = rng.random_range(70.0..120.0);
    while t < len as f64 / sr {
        let start = (t * sr) as usize;
        let gain = rng.random_range(0.5..1.0);
        let n = ((decay * 6.0) * sr) as usize;
        let mut state = 0.0;
        for k in 0..n.min(len - start) {
            let tau = k as f64 / sr;
            let env = (1.0 - (-tau / 0.002).exp()) * (-tau / decay).exp();
            state += lp * (gauss(rng) - state);
            let body = 0.6 * (2.0 * PI * thump * tau).sin();
            out[start + k] += gain * env * (state * 2.0 + body);
        }
        t += period * rng.random_range(0.9..1.1);
    }
    out
}

fn rain(len: usize, sr: f64, cutoff: f64, drops: f64, rng: &mut impl Rng) -> Vec<f64> {
    let lp = one_pole(cutoff, sr);
    let swell: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.3..2.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let mut state = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * swell.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>() / 3.0;
            state += lp * (gauss(rng) - state);
            0.3 * env * state
        })
        .collect();
    let n_drops = (drops * len as f64 / sr).round() as usize;
    for _ in 0..n_drops {
        let start = rng.random_range(0..len);
        let amp = rng.random_range(0.2..0.6);
        let n = (0.004 * sr) as usize;
        let mut prev = 0.0;
        for k in 0..n.min(len - start) {
            let w = gauss(rng);
            // first difference makes the droplet bright
            out[start + k] += amp * (w - prev) * (-(k as f64) / (0.001 * sr)).exp();
            prev = w;
        }
    }
    out
}

fn bark(len: usize, sr: f64, f0: f64, count: u32, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let dur = len as f64 / sr;
    let slot = dur / count as f64;
    for b in 0..count {
        let length = rng.random_range(0.12f64..0.2).min(slot * 0.9);
        let start_t = b as f64 * slot + rng.random_range(0.0..(slot - length).max(1e-3));
        let start = (start_t * sr) as usize;
        let n = (length * sr) as usize;
        let am = rng.random_range(25.0..40.0);
        let mut phase = 0.0;
        for k in 0..n.min(len.saturating_sub(start)) {
            let u = k as f64 / n as f64;
            let f = f0 * (1.0 - 0.2 * u);
            phase += 2.0 * PI * f / sr;
            let env = (u * 20.0).min(1.0) * (1.0 - u).powi(2);
            let rough = 0.75 + 0.25 * (2.0 * PI * am * k as f64 / sr).sin();
            // harmonics weighted by a broad resonance near 1 kHz
            let tone: f64 = (1..=6)
                .map(|h| {
                    let fh = h as f64 * f;
                    if fh >= sr / 2.0 {
                        return 0.0;
                    }
                    let res = 1.0 / (1.0 + ((fh - 1000.0) / 600.0).powi(2));
                    (0.3 + res) / h as f64 * (h as f64 * phase).sin()
                })
                .sum();
            out[start + k] += env * rough * tone;
        }
    }
    out
}

fn chirp(len: usize, sr: f64, f_low: f64, f_high: f64, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let length = 0.06;
    let n = (length * sr) as usize;
    let mut t = rng.random_range(0.0..0.5 / rate);
    while t < len as f64 / sr {
        let start = (t * sr) as usize;
        let gain = rng.random_range(0.6..1.0);
        let mut phase = 0.0;
        for k in 0..n.min(len - start) {
            let u = k as f64 / n as f64;
            phase += 2.0 * PI * (f_low + (f_high - f_low) * u) / sr;
            let env = (PI * u).sin().powi(2);
            out[start + k] += gain * env * phase.sin();
        }
        t += rng.random_range(0.8..1.2) / rate;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(params: SynthParams, duration: f64) -> SynthSpec {
        SynthSpec::new(params, duration, 11)
    }

    #[test]
    fn same_spec_renders_identical_buffers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in SynthKind::ALL {
            let s = spec(SynthParams::random(kind, &mut rng), 1.0);
            assert_eq!(synth_clip(&s).unwrap(), synth_clip(&s).unwrap(), "{kind}");
        }
    }

    #[test]
    fn length_is_rounded_duration_times_rate() {
        let s = spec(SynthParams::Siren { f_start: 200.0, f_end: 800.0 }, 0.5);
        assert_eq!(synth_clip(&s).unwrap().len(), 8000);
        let s = spec(SynthParams::Rain { cutoff_hz: 2000.0, drops_per_s: 10.0 }, 0.10004);
        assert_eq!(synth_clip(&s).unwrap().len(), 1601);
    }

    #[test]
    fn every_kind_is_audible_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in SynthKind::ALL {
            let clip = synth_clip(&spec(SynthParams::random(kind, &mut rng), 1.0)).unwrap();
            assert!(clip.peak() > 0.5 && clip.peak() <= 1.0, "{kind}: {}", clip.peak());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = spec(SynthParams::Siren { f_start: 200.0, f_end: 9000.0 }, 1.0);
        assert!(synth_clip(&bad).is_err());
        let bad = spec(SynthParams::Siren { f_start: 200.0, f_end: 800.0 }, 0.0);
        assert!(synth_clip(&bad).is_err());
        assert!("gunshot".parse::<SynthKind>().is_err());
        assert_eq!("rain".parse::<SynthKind>().unwrap(), SynthKind::Rain);
    }
}
