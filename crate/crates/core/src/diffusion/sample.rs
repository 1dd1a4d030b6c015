use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{cfg_combine, predict_noise, GuidanceMode, GuidanceScales, NoiseSchedule};
use crate::codec::{LatentSeq, LATENT_CHANNELS};
use crate::conditioning::{masked_rows, CondState, TextEmbedding};
use crate::dit::DiTModel;
use crate::error::{Error, Result};
use crate::features::{normalize_controls, resample_controls, ControlSignals, ControlStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// Deterministic DDIM (η = 0).
    #[default]
    Ddim,
    /// Ancestral sampling (η = 1) on the same stride.
    Ddpm,
}

impl Sampler {
    fn eta(self) -> f64 {
        match self {
            Sampler::Ddim => 0.0,
            Sampler::Ddpm => 1.0,
        }
    }
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(Self::Ddim),
            "ddpm" => Ok(Self::Ddpm),
            other => Err(Error::InvalidArgument(format!("unknown sampler '{other}' (expected ddim or ddpm)"))),
        }
    }
}

/// Inputs of one generation.
#[derive(Debug, Clone)]
pub struct SampleRequest<'a> {
    pub text: &'a TextEmbedding,
    /// Normalised controls already on the latent grid, `n_frames` long.
    pub controls: Option<&'a ControlSignals>,
    pub scales: GuidanceScales,
    pub mode: GuidanceMode,
    pub n_frames: usize,
    pub steps: usize,
    pub sampler: Sampler,
    pub seed: u64,
    pub sample_rate: u32,
    /// Model latents are codec latents times this factor.
    pub latent_scale: f64,
    /// Clamp each predicted clean latent to the codec range, `±latent_scale`.
    pub clip_x0: bool,
    /// Control groups the model may see; every branch is intersected with it.
    pub allowed: CondState,
}

impl<'a> SampleRequest<'a> {
    pub fn new(text: &'a TextEmbedding, controls: Option<&'a ControlSignals>, n_frames: usize, seed: u64) -> Self {
        Self {
            text,
            controls,
            scales: GuidanceScales::default(),
            mode: GuidanceMode::Nested,
            n_frames,
            steps: 50,
            sampler: Sampler::Ddim,
            seed,
            sample_rate: crate::audio_io::DEFAULT_SAMPLE_RATE,
            latent_scale: 1.0,
            clip_x0: true,
            allowed: CondState::FULL,
        }
    }
}

/// Resamples raw controls to `n_frames` latent frames and normalises them.
pub fn prepare_controls(
    raw: &ControlSignals,
    stats: &ControlStats,
    latent_rate: f64,
    n_frames: usize,
) -> Result<ControlSignals> {
    normalize_controls(&resample_controls(raw, latent_rate, n_frames)?, stats)
}

/// Net weight of each branch (u, T, TC, TCM) in the guided prediction.
fn branch_weights(s: &GuidanceScales, mode: GuidanceMode) -> [f64; 4] {
    match mode {
        GuidanceMode::Nested => [1.0 - s.s_text, s.s_text - s.s_ctrls, s.s_ctrls - s.s_timbre, s.s_timbre],
        GuidanceMode::Independent => [1.0 - s.s_text - s.s_ctrls - s.s_timbre, s.s_text, s.s_ctrls, s.s_timbre],
    }
}

/// Strided DDIM/DDPM sampling with four-branch guidance.
///
/// A branch whose net weight is exactly zero is not evaluated; another
/// branch's prediction stands in for it, which leaves the result unchanged.
pub fn sample(model: &DiTModel, schedule: &NoiseSchedule, req: &SampleRequest) -> Result<LatentSeq> {
    req.scales.validate()?;
    if !(req.latent_scale > 0.0 && req.latent_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("latent scale {} must be positive", req.latent_scale)));
    }
    if req.steps == 0 || req.steps > schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "sampling steps must lie in 1..={}, got {}",
            schedule.len(),
            req.steps
        )));
    }
    if req.n_frames == 0 || req.n_frames > model.config.max_frames {
        return Err(Error::shape("latent frames", format!("1..={}", model.config.max_frames), req.n_frames));
    }
    if req.text.dim() != model.config.d_text {
        return Err(Error::shape("text width", model.config.d_text, req.text.dim()));
    }
    if req.scales.uses_controls() && req.controls.is_none() {
        return Err(Error::Missing(
            "reference controls are required when s_ctrls or s_timbre is positive".into(),
        ));
    }
    if let Some(c) = req.controls {
        if c.n_frames() != req.n_frames {
            return Err(Error::shape("control frames", req.n_frames, c.n_frames()));
        }
    }

    let null_text = TextEmbedding::null(req.text.dim());
    let texts = [&null_text, req.text, req.text, req.text];
    let biases: Vec<Array2<f64>> = CondState::BRANCHES
        .iter()
        .map(|mask| match req.controls {
            Some(c) => model.control_proj.forward(&masked_rows(c, &mask.intersect(&req.allowed))),
            None => {
                let zeros = Array2::zeros((req.n_frames, crate::features::CONTROL_CHANNELS));
                model.control_proj.forward(&zeros)
            }
        })
        .collect();
    let weights = branch_weights(&req.scales, req.mode);
    let mut needed = weights.map(|w| w != 0.0);
    if req.controls.is_none() {
        needed[2] = false;
        needed[3] = false;
    }
    if !needed.iter().any(|&b| b) {
        needed[1] = true;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut z = Array2::from_shape_fn((req.n_frames, LATENT_CHANNELS), |_| rng.sample::<f64, _>(StandardNormal));
    let stride: Vec<usize> = (0..req.steps).map(|i| i * schedule.len() / req.steps).collect();
    let eta = req.sampler.eta();
    for i in (0..req.steps).rev() {
        let t = stride[i];
        let ab = schedule.alpha_bars()[t];
        let ab_prev = if i > 0 { schedule.alpha_bars()[stride[i - 1]] } else { 1.0 };

        let mut eps: [Option<Array2<f64>>; 4] = Default::default();
        for b in 0..4 {
            if needed[b] {
                eps[b] = Some(predict_noise(model, &z, &biases[b], t, ab, texts[b], 0)?);
            }
        }
        let first = eps.iter().flatten().next().cloned().expect("one branch evaluated");
        let eps: [Array2<f64>; 4] = eps.map(|e| e.unwrap_or_else(|| first.clone()));
        let eps_hat = cfg_combine(&eps[0], &eps[1], &eps[2], &eps[3], &req.scales, req.mode)?;

        let mut x0 = (&z - &(&eps_hat * (1.0 - ab).sqrt())) / ab.sqrt();
        if req.clip_x0 {
            let lim = req.latent_scale;
            x0.mapv_inplace(|v| v.clamp(-lim, lim));
        }
        let eps_dir = (&z - &(&x0 * ab.sqrt())) / (1.0 - ab).sqrt();
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt();
        let mut next = &x0 * ab_prev.sqrt();
        next.scaled_add((1.0 - ab_prev - sigma * sigma).max(0.0).sqrt(), &eps_dir);
        if sigma > 0.0 {
            let xi = Array2::from_shape_fn(z.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
            next.scaled_add(sigma, &xi);
        }
        z = next;
    }
    LatentSeq::new(z / req.latent_scale, req.sample_rate, req.n_frames * LATENT_CHANNELS)
}
