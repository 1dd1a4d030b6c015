//! Noise schedule, forward noising, training loop, guidance and sampling.

mod guidance;
mod optim;
mod sample;
mod train;

pub use guidance::{cfg_combine, GuidanceMode, GuidanceScales};
pub use optim::AdamW;
pub use sample::{prepare_controls, sample, SampleRequest, Sampler};
pub use train::{
    finetune, finetune_set, training_loss, write_loss_log, LossOutput, PhaseConfig, TrainConfig, TrainExample, TrainOutcome, TrainedModel, TrainingSet,
    LOSS_LOG_FILE,
};

use ndarray::Array2;

use crate::conditioning::TextEmbedding;
use crate::dit::DiTModel;
use crate::error::{Error, Result};

/// Linear-β DDPM schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const BETA_START: f64 = 1e-4;
    pub const BETA_END: f64 = 0.02;

    /// `steps` betas spaced linearly over `[beta_start, beta_end]`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "betas must satisfy 0 < {beta_start} <= {beta_end} < 1"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                beta_start + frac * (beta_end - beta_start)
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { betas, alpha_bar })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("timestep {t} outside 0..{}", self.len())))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(Self::DEFAULT_STEPS, Self::BETA_START, Self::BETA_END).expect("valid default schedule")
    }
}

/// Noise estimate for `z_t`: `√ᾱ_t · F(z_t + ctrl_emb) + √(1 − ᾱ_t) · z_t`,
/// with `F` the transformer. The skip term makes the high-noise limit exact.
pub fn predict_noise(
    model: &DiTModel,
    z_t: &Array2<f64>,
    ctrl_emb: &Array2<f64>,
    t: usize,
    alpha_bar: f64,
    text: &TextEmbedding,
    offset: usize,
) -> Result<Array2<f64>> {
    let f = model.forward_at(&(z_t + ctrl_emb), t, text, offset)?;
    Ok(combine_skip(f, z_t, alpha_bar))
}

pub(crate) fn combine_skip(f: Array2<f64>, z_t: &Array2<f64>, alpha_bar: f64) -> Array2<f64> {
    let mut eps = f * alpha_bar.sqrt();
    eps.scaled_add((1.0 - alpha_bar).sqrt(), z_t);
    eps
}

/// `√ᾱ_t · z0 + √(1 − ᾱ_t) · noise`.
pub fn q_sample(z0: &Array2<f64>, t: usize, noise: &Array2<f64>, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    let ab = schedule.alpha_bar(t)?;
    q_sample_with(z0, ab, noise)
}

pub(crate) fn q_sample_with(z0: &Array2<f64>, alpha_bar: f64, noise: &Array2<f64>) -> Result<Array2<f64>> {
    if z0.dim() != noise.dim() {
        return Err(Error::shape(
            "noise",
            format!("{:?}", z0.dim()),
            format!("{:?}", noise.dim()),
        ));
    }
    let mut z = z0 * alpha_bar.sqrt();
    z.scaled_add((1.0 - alpha_bar).sqrt(), noise);
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_bar_is_strictly_decreasing() {
        let s = NoiseSchedule::default();
        assert_eq!(s.len(), 1000);
        assert!((s.alpha_bar(0).unwrap() - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        assert!(s.alpha_bar(1000).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 0.1).is_err());
    }

    #[test]
    fn q_sample_limits() {
        let z0 = Array2::from_elem((3, 4), 0.5);
        let noise = Array2::from_elem((3, 4), -2.0);
        assert_eq!(q_sample_with(&z0, 1.0, &noise).unwrap(), z0);
        assert_eq!(q_sample_with(&z0, 0.0, &noise).unwrap(), noise);
        assert!(q_sample_with(&z0, 0.5, &Array2::zeros((2, 4))).is_err());
    }
}
