//! Training-time transforms of control signals: median smoothing, rate
//! alignment to the latent grid, and per-track affine normalisation.

use rand::Rng;

use super::{ControlSignals, N_MFCC};
use crate::error::{Error, Result};

/// Sliding median with replicate padding; `kernel` must be odd.
pub fn median_filter(signal: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "median kernel must be odd and positive, got {kernel}"
        )));
    }
    if kernel == 1 || signal.is_empty() {
        return Ok(signal.to_vec());
    }
    let half = kernel / 2;
    let last = signal.len() - 1;
    let mut window = vec![0.0; kernel];
    Ok((0..signal.len())
        .map(|i| {
            for (j, w) in window.iter_mut().enumerate() {
                let idx = (i + j).saturating_sub(half).min(last);
                *w = signal[idx];
            }
            window.sort_unstable_by(f64::total_cmp);
            window[half]
        })
        .collect())
}

/// Median-filters each track with its own kernel drawn uniformly from
/// `kernel_choices`. Draw order: loudness, pitch, centroid, MFCC (one kernel
/// shared by all 13 coefficients).
pub fn random_median_filter(
    ctrls: &ControlSignals,
    rng: &mut impl Rng,
    kernel_choices: &[usize],
) -> Result<ControlSignals> {
    if kernel_choices.is_empty() {
        return Err(Error::InvalidArgument("no median kernels to choose from".into()));
    }
    if let Some(k) = kernel_choices.iter().find(|&&k| k % 2 == 0) {
        return Err(Error::InvalidArgument(format!("median kernel {k} is even")));
    }
    let mut draw = || kernel_choices[rng.random_range(0..kernel_choices.len())];
    let (k_loud, k_pitch, k_cent, k_mfcc) = (draw(), draw(), draw(), draw());
    let mut mfcc = ctrls.mfcc.clone();
    if k_mfcc > 1 {
        for c in 0..N_MFCC {
            let column: Vec<f64> = ctrls.mfcc.iter().map(|m| m[c]).collect();
            for (m, v) in mfcc.iter_mut().zip(median_filter(&column, k_mfcc)?) {
                m[c] = v;
            }
        }
    }
    Ok(ControlSignals {
        loudness: median_filter(&ctrls.loudness, k_loud)?,
        pitch_hz: median_filter(&ctrls.pitch_hz, k_pitch)?,
        centroid_hz: median_filter(&ctrls.centroid_hz, k_cent)?,
        mfcc,
        frame_rate: ctrls.frame_rate,
    })
}

/// Linearly interpolates every track onto `n_frames` frames at `target_rate`.
///
/// Target frame `j` sits at time `j / target_rate`; times past the last
/// source frame hold its value. Pitch interpolates only between two voiced
/// neighbours and otherwise takes the nearer one, so the 0 Hz unvoiced
/// marker never blends into a voiced value.
pub fn resample_controls(ctrls: &ControlSignals, target_rate: f64, n_frames: usize) -> Result<ControlSignals> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("target rate {target_rate} must be positive")));
    }
    let n_src = ctrls.n_frames();
    if n_src == 0 {
        return Err(Error::InvalidArgument("cannot resample empty controls".into()));
    }
    let same_grid = target_rate == ctrls.frame_rate && n_frames == n_src;
    if same_grid {
        return Ok(ctrls.clone());
    }
    let positions: Vec<(usize, usize, f64)> = (0..n_frames)
        .map(|j| {
            let p = (j as f64 * ctrls.frame_rate / target_rate).min((n_src - 1) as f64);
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(n_src - 1);
            (lo, hi, p - lo as f64)
        })
        .collect();
    let lerp = |track: &[f64]| -> Vec<f64> {
        positions
            .iter()
            .map(|&(lo, hi, w)| track[lo] + w * (track[hi] - track[lo]))
            .collect()
    };
    let pitch = positions
        .iter()
        .map(|&(lo, hi, w)| {
            let (a, b) = (ctrls.pitch_hz[lo], ctrls.pitch_hz[hi]);
            if a > 0.0 && b > 0.0 {
                a + w * (b - a)
            } else if w < 0.5 {
                a
            } else {
                b
            }
        })
        .collect();
    let mfcc = positions
        .iter()
        .map(|&(lo, hi, w)| {
            let (a, b) = (&ctrls.mfcc[lo], &ctrls.mfcc[hi]);
            std::array::from_fn(|c| a[c] + w * (b[c] - a[c]))
        })
        .collect();
    Ok(ControlSignals {
        loudness: lerp(&ctrls.loudness),
        pitch_hz: pitch,
        centroid_hz: lerp(&ctrls.centroid_hz),
        mfcc,
        frame_rate: target_rate,
    })
}

/// `(value - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    pub const fn new(shift: f64, scale: f64) -> Self {
        Self { shift, scale }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }

    fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.shift
    }

    /// Mean/std fit; a constant sample gets unit scale.
    pub fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
        Self::new(mean, if std > 1e-12 { std } else { 1.0 })
    }
}

/// Per-track normalisation constants. Pitch constants act on `ln(Hz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlStats {
    pub loudness: Affine,
    pub log_pitch: Affine,
    pub centroid: Affine,
    pub mfcc: [Affine; N_MFCC],
}

impl ControlStats {
    pub fn identity() -> Self {
        Self {
            loudness: Affine::IDENTITY,
            log_pitch: Affine::IDENTITY,
            centroid: Affine::IDENTITY,
            mfcc: [Affine::IDENTITY; N_MFCC],
        }
    }

    /// Fits mean/std per track over a corpus; pitch over voiced frames only.
    pub fn fit(corpus: &[ControlSignals]) -> Self {
        Self {
            loudness: Affine::fit(corpus.iter().flat_map(|c| c.loudness.iter().copied())),
            log_pitch: Affine::fit(
                corpus
                    .iter()
                    .flat_map(|c| c.pitch_hz.iter().copied())
                    .filter(|&p| p > 0.0)
                    .map(f64::ln),
            ),
            centroid: Affine::fit(corpus.iter().flat_map(|c| c.centroid_hz.iter().copied())),
            mfcc: std::array::from_fn(|k| Affine::fit(corpus.iter().flat_map(|c| c.mfcc.iter().map(move |m| m[k])))),
        }
    }

    fn all(&self) -> impl Iterator<Item = &Affine> {
        [&self.loudness, &self.log_pitch, &self.centroid].into_iter().chain(self.mfcc.iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.all().any(|a| !(a.scale > 0.0) || !a.shift.is_finite()) {
            return Err(Error::InvalidArgument("normalisation scale must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ControlStats {
    /// Constants fitted to the synthetic Foley corpus (16 kHz, default grid).
    fn default() -> Self {
        DEFAULT_STATS
    }
}

const DEFAULT_STATS: ControlStats = ControlStats {
    loudness: Affine::new(0.1, 0.1),
    log_pitch: Affine::new(6.0, 0.5),
    centroid: Affine::new(1500.0, 1000.0),
    mfcc: [Affine::IDENTITY; N_MFCC],
};

pub fn normalize_controls(ctrls: &ControlSignals, stats: &ControlStats) -> Result<ControlSignals> {
    stats.validate()?;
    Ok(ControlSignals {
        loudness: ctrls.loudness.iter().map(|&v| stats.loudness.apply(v)).collect(),
        pitch_hz: ctrls
            .pitch_hz
            .iter()
            .map(|&p| if p > 0.0 { stats.log_pitch.apply(p.ln()) } else { 0.0 })
            .collect(),
        centroid_hz: ctrls.centroid_hz.iter().map(|&v| stats.centroid.apply(v)).collect(),
        mfcc: ctrls
            .mfcc
            .iter()
            .map(|m| std::array::from_fn(|k| stats.mfcc[k].apply(m[k])))
            .collect(),
        frame_rate: ctrls.frame_rate,
    })
}

pub fn denormalize_controls(ctrls: &ControlSignals, stats: &ControlStats) -> Result<ControlSignals> {
    stats.validate()?;
    Ok(ControlSignals {
        loudness: ctrls.loudness.iter().map(|&v| stats.loudness.invert(v)).collect(),
        pitch_hz: ctrls
            .pitch_hz
            .iter()
            .map(|&p| if p != 0.0 { stats.log_pitch.invert(p).exp() } else { 0.0 })
            .collect(),
        centroid_hz: ctrls.centroid_hz.iter().map(|&v| stats.centroid.invert(v)).collect(),
        mfcc: ctrls
            .mfcc
            .iter()
            .map(|m| std::array::from_fn(|k| stats.mfcc[k].invert(m[k])))
            .collect(),
        frame_rate: ctrls.frame_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp_controls(n: usize, rate: f64) -> ControlSignals {
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        ControlSignals {
            loudness: t.iter().map(|x| 0.5 * x).collect(),
            pitch_hz: t.iter().map(|x| 100.0 + 3.0 * x).collect(),
            centroid_hz: t.iter().map(|x| 2000.0 - 7.0 * x).collect(),
            mfcc: t.iter().map(|x| std::array::from_fn(|k| k as f64 * x)).collect(),
            frame_rate: rate,
        }
    }

    #[test]
    fn median_kernel_one_is_identity() {
        let x = [3.0, -1.0, 7.5, 0.0];
        assert_eq!(median_filter(&x, 1).unwrap(), x);
    }

    #[test]
    fn median_spike_is_removed() {
        assert_eq!(median_filter(&[1.0, 5.0, 1.0], 3).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn median_rejects_even_kernels() {
        assert!(median_filter(&[1.0, 2.0], 2).is_err());
        assert!(median_filter(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn median_kernel_longer_than_signal_uses_replicated_edges() {
        assert_eq!(median_filter(&[1.0, 9.0], 5).unwrap(), vec![1.0, 9.0]);
    }

    #[test]
    fn random_filter_with_only_kernel_one_is_identity() {
        let c = ramp_controls(20, 62.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_median_filter(&c, &mut rng, &[1]).unwrap(), c);
        assert!(random_median_filter(&c, &mut rng, &[]).is_err());
        assert!(random_median_filter(&c, &mut rng, &[1, 4]).is_err());
    }

    #[test]
    fn random_filter_is_deterministic_for_a_seed() {
        let mut c = ramp_controls(40, 62.5);
        c.loudness[7] = 100.0;
        let run = |seed| {
            random_median_filter(&c, &mut ChaCha8Rng::seed_from_u64(seed), &[1, 3, 5, 7]).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn resample_same_grid_is_identity() {
        let c = ramp_controls(17, 62.5);
        assert_eq!(resample_controls(&c, 62.5, 17).unwrap(), c);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let c = ControlSignals {
            loudness: vec![0.3; 10],
            pitch_hz: vec![220.0; 10],
            centroid_hz: vec![900.0; 10],
            mfcc: vec![[1.5; N_MFCC]; 10],
            frame_rate: 62.5,
        };
        let r = resample_controls(&c, 250.0, 40).unwrap();
        assert_eq!(r.n_frames(), 40);
        assert!(r.loudness.iter().all(|&v| v == 0.3));
        assert!(r.pitch_hz.iter().all(|&v| v == 220.0));
        assert!(r.mfcc.iter().flatten().all(|&v| v == 1.5));
        assert!(resample_controls(&c, 0.0, 4).is_err());
    }

    #[test]
    fn resampled_ramp_stays_linear() {
        let c = ramp_controls(30, 62.5);
        let r = resample_controls(&c, 125.0, 59).unwrap();
        for (j, v) in r.loudness.iter().enumerate() {
            assert!((v - 0.5 * (j as f64 / 2.0)).abs() <= 1e-6);
        }
        for (j, v) in r.pitch_hz.iter().enumerate() {
            assert!((v - (100.0 + 3.0 * j as f64 / 2.0)).abs() <= 1e-6);
        }
    }

    #[test]
    fn resampling_keeps_unvoiced_markers_crisp() {
        let mut c = ramp_controls(4, 10.0);
        c.pitch_hz = vec![200.0, 0.0, 0.0, 300.0];
        let r = resample_controls(&c, 40.0, 13).unwrap();
        assert!(r.pitch_hz.iter().all(|&p| p == 0.0 || p >= 200.0));
    }

    #[test]
    fn identity_stats_only_log_map_pitch() {
        let mut c = ramp_controls(5, 62.5);
        c.pitch_hz[2] = 0.0;
        let n = normalize_controls(&c, &ControlStats::identity()).unwrap();
        assert_eq!(n.loudness, c.loudness);
        assert_eq!(n.centroid_hz, c.centroid_hz);
        assert_eq!(n.mfcc, c.mfcc);
        assert_eq!(n.pitch_hz[2], 0.0);
        assert_eq!(n.pitch_hz[1], c.pitch_hz[1].ln());
    }

    #[test]
    fn zero_scale_is_rejected() {
        let mut s = ControlStats::identity();
        s.centroid.scale = 0.0;
        assert!(normalize_controls(&ramp_controls(3, 1.0), &s).is_err());
    }

    #[test]
    fn fit_recovers_mean_and_std() {
        let a = Affine::fit([1.0, 3.0].into_iter());
        assert_eq!(a, Affine::new(2.0, 1.0));
        assert_eq!(Affine::fit([4.0, 4.0].into_iter()), Affine::new(4.0, 1.0));
    }
}
