use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{combine_skip, q_sample_with, AdamW, NoiseSchedule};
use crate::audio_io::{read_wav, AudioClip, DatasetManifest};
use crate::checkpoint::{save_adapters, save_base, AdapterCheckpoint};
use crate::codec;
use crate::conditioning::{embed_text_with_dim, masked_rows, sample_dropout, sample_dropout_per_signal, TextEmbedding};
use crate::dit::{DiTConfig, DiTModel};
use crate::error::{Error, Result};
use crate::features::{
    extract_controls, normalize_controls, random_median_filter, resample_controls, ControlSignals, ControlStats,
    FrameGrid,
};
use crate::nn::ParamGroup;

pub const LOSS_LOG_FILE: &str = "loss.tsv";

/// One clip ready for training: clean latents, raw controls and caption tokens.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub latent: Array2<f64>,
    pub controls: ControlSignals,
    pub text: TextEmbedding,
    pub caption: String,
}

/// Encoded clips plus the normalisation constants used for their controls.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub examples: Vec<TrainExample>,
    pub stats: ControlStats,
    pub latent_rate: f64,
}

impl TrainingSet {
    /// Encodes each clip and extracts its controls on `grid`. Stats are fitted
    /// to the set unless given.
    pub fn from_clips(
        clips: &[(AudioClip, String)],
        grid: &FrameGrid,
        text_dim: usize,
        stats: Option<ControlStats>,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let examples = clips
            .iter()
            .map(|(clip, caption)| {
                Ok(TrainExample {
                    latent: codec::encode(clip)?.into_frames(),
                    controls: extract_controls(clip, grid)?,
                    text: embed_text_with_dim(caption, text_dim),
                    caption: caption.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = match stats {
            Some(s) => s,
            None => ControlStats::fit(&examples.iter().map(|e| e.controls.clone()).collect::<Vec<_>>()),
        };
        stats.validate()?;
        Ok(Self {
            examples,
            stats,
            latent_rate: codec::latent_rate(grid.sample_rate),
        })
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        grid: &FrameGrid,
        text_dim: usize,
        stats: Option<ControlStats>,
    ) -> Result<Self> {
        let clips = manifest
            .entries
            .iter()
            .map(|e| Ok((read_wav(manifest.resolve(e))?, e.caption.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::from_clips(&clips, grid, text_dim, stats)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Per-phase sampling choices for [`training_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub p_text: f64,
    pub p_dyn: f64,
    pub p_timbre: f64,
    /// Drop loudness, pitch and centroid independently instead of as one group.
    pub per_signal_dropout: bool,
    pub median_kernels: Vec<usize>,
    /// Training window in latent frames; 0 uses whole clips.
    pub crop_frames: usize,
    /// Multiplier applied to codec latents before noising.
    pub latent_scale: f64,
    /// Per-timestep loss weight is `min(1 / alpha_bar, weight_cap)`.
    pub weight_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: DiTConfig,
    /// Full-parameter steps that train the base model before adaptation.
    pub base_steps: usize,
    pub base_p_text: f64,
    pub base_p_dyn: f64,
    pub base_p_timbre: f64,
    /// Adapter and projection steps on the frozen base.
    pub steps: usize,
    pub p_text: f64,
    pub p_dyn: f64,
    pub p_timbre: f64,
    pub per_signal_dropout: bool,
    pub median_kernels: Vec<usize>,
    pub crop_frames: usize,
    /// Multiplier applied to codec latents; a power of two keeps it exact.
    pub latent_scale: f64,
    /// Noise-error weight `min(1 / alpha_bar, weight_cap)`; 1 is the plain mean squared error.
    pub weight_cap: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Each phase decays the learning rate along a half cosine to `lr * lr_final_ratio`.
    pub lr_final_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub schedule_steps: usize,
    /// Write adapter checkpoints every this many adaptation steps; 0 only at the end.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: DiTConfig::default(),
            base_steps: 1000,
            base_p_text: 0.15,
            base_p_dyn: 0.15,
            base_p_timbre: 0.15,
            steps: 1000,
            p_text: 0.15,
            p_dyn: 0.15,
            p_timbre: 0.15,
            per_signal_dropout: false,
            median_kernels: (1..=31).step_by(2).collect(),
            crop_frames: 64,
            latent_scale: 16.0,
            weight_cap: 100.0,
            batch_size: 8,
            lr: 1e-3,
            lr_final_ratio: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            grad_clip: 1.0,
            lora_rank: 4,
            lora_alpha: 4.0,
            schedule_steps: NoiseSchedule::DEFAULT_STEPS,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.schedule_steps != self.model.n_timesteps {
            return Err(Error::InvalidArgument(format!(
                "schedule has {} steps but the model accepts {}",
                self.schedule_steps, self.model.n_timesteps
            )));
        }
        if self.base_steps + self.steps == 0 {
            return Err(Error::InvalidArgument("no training steps requested".into()));
        }
        if self.batch_size == 0 || self.lora_rank == 0 {
            return Err(Error::InvalidArgument("batch size and adapter rank must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.lr_final_ratio) {
            return Err(Error::InvalidArgument(format!("final learning-rate ratio {} outside [0, 1]", self.lr_final_ratio)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.latent_scale > 0.0 && self.latent_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("latent scale {} must be positive", self.latent_scale)));
        }
        if !(self.weight_cap >= 1.0 && self.weight_cap.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight cap {} must be at least 1", self.weight_cap)));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || !(self.lora_alpha > 0.0) {
            return Err(Error::InvalidArgument("weight decay, clip and alpha must be non-negative".into()));
        }
        if self.median_kernels.is_empty() || self.median_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument("median kernels must be odd and non-empty".into()));
        }
        for p in [
            self.base_p_text,
            self.base_p_dyn,
            self.base_p_timbre,
            self.p_text,
            self.p_dyn,
            self.p_timbre,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn base_phase(&self) -> PhaseConfig {
        PhaseConfig {
            p_text: self.base_p_text,
            p_dyn: self.base_p_dyn,
            p_timbre: self.base_p_timbre,
            ..self.adapt_phase()
        }
    }

    pub fn adapt_phase(&self) -> PhaseConfig {
        PhaseConfig {
            p_text: self.p_text,
            p_dyn: self.p_dyn,
            p_timbre: self.p_timbre,
            per_signal_dropout: self.per_signal_dropout,
            median_kernels: self.median_kernels.clone(),
            crop_frames: self.crop_frames,
            latent_scale: self.latent_scale,
            weight_cap: self.weight_cap,
        }
    }
}

pub struct LossOutput {
    /// Mean squared noise error over the batch.
    pub loss: f64,
    /// Gradients of `loss`; frozen tensors stay zero.
    pub grad: DiTModel,
}

/// Noise-prediction loss and gradients for one batch.
///
/// Per example: random median filter, resample to the latent grid, normalise,
/// crop, draw a dropout mask, noise at a uniform timestep, fuse the projected
/// controls and predict the noise with [`predict_noise`](super::predict_noise).
pub fn training_loss(
    model: &DiTModel,
    schedule: &NoiseSchedule,
    batch: &[&TrainExample],
    stats: &ControlStats,
    latent_rate: f64,
    phase: &PhaseConfig,
    rng: &mut impl Rng,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if schedule.len() != model.config.n_timesteps {
        return Err(Error::shape("schedule length", model.config.n_timesteps, schedule.len()));
    }
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let per_example: Vec<(f64, DiTModel)> = batch
        .par_iter()
        .zip(seeds)
        .map(|(ex, seed)| example_loss(model, schedule, ex, stats, latent_rate, phase, seed, batch.len()))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = model.zeros_like();
    for (l, g) in per_example {
        loss += l / batch.len() as f64;
        add_into(&mut grad, &g);
    }
    Ok(LossOutput { loss, grad })
}

#[allow(clippy::too_many_arguments)]
fn example_loss(
    model: &DiTModel,
    schedule: &NoiseSchedule,
    ex: &TrainExample,
    stats: &ControlStats,
    latent_rate: f64,
    phase: &PhaseConfig,
    seed: u64,
    batch_len: usize,
) -> Result<(f64, DiTModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ex.latent.nrows();
    let filtered = random_median_filter(&ex.controls, &mut rng, &phase.median_kernels)?;
    let ctrls = normalize_controls(&resample_controls(&filtered, latent_rate, n)?, stats)?;
    let crop = if phase.crop_frames == 0 { n } else { phase.crop_frames.min(n) };
    let offset = if crop < n { rng.random_range(0..=n - crop) } else { 0 };
    let z0 = ex.latent.slice(s![offset..offset + crop, ..]).to_owned() * phase.latent_scale;
    let ctrls = ctrls.slice(offset, crop);
    let mask = if phase.per_signal_dropout {
        sample_dropout_per_signal(&mut rng, phase.p_text, phase.p_dyn, phase.p_timbre)?
    } else {
        sample_dropout(&mut rng, phase.p_text, phase.p_dyn, phase.p_timbre)?
    };
    let text = if mask.text {
        ex.text.clone()
    } else {
        TextEmbedding::null(ex.text.dim())
    };
    let t = rng.random_range(0..schedule.len());
    let noise = Array2::from_shape_fn(z0.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
    let z_t = q_sample_with(&z0, schedule.alpha_bars()[t], &noise)?;
    let rows = masked_rows(&ctrls, &mask);
    let z_in = &z_t + &model.control_proj.forward(&rows);
    let (f, cache) = model.forward_train(&z_in, t, &text, offset)?;
    let ab = schedule.alpha_bars()[t];
    let diff = combine_skip(f, &z_t, ab) - &noise;
    let numel = diff.len() as f64;
    let w = (1.0 / ab).min(phase.weight_cap);
    let loss = w * diff.iter().map(|d| d * d).sum::<f64>() / numel;
    let d_out = diff * (2.0 * w * ab.sqrt() / (numel * batch_len as f64));
    let mut grad = model.zeros_like();
    let dz = model.backward(&cache, &d_out, &mut grad);
    model.control_proj.backward(&rows, &dz, &mut grad.control_proj);
    Ok((loss, grad))
}

fn add_into(acc: &mut DiTModel, g: &DiTModel) {
    for (a, b) in acc.params_mut().into_iter().zip(g.params()) {
        for (x, y) in a.data.iter_mut().zip(b.data) {
            *x += y;
        }
    }
}

/// Scales trainable gradients so their global L2 norm is at most `max_norm`.
fn clip_grad(grad: &mut DiTModel, base_trainable: bool, max_norm: f64) -> f64 {
    let trainable = |g: ParamGroup| g != ParamGroup::Base || base_trainable;
    let norm = grad
        .params()
        .iter()
        .filter(|p| trainable(p.group))
        .flat_map(|p| p.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for p in grad.params_mut() {
            p.data.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// A model together with the control normalisation and latent scale it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: DiTModel,
    pub stats: ControlStats,
    pub latent_scale: f64,
}

impl TrainedModel {
    /// Applies an adapter checkpoint to `base`.
    pub fn from_checkpoint(mut base: DiTModel, ck: &AdapterCheckpoint) -> Result<Self> {
        ck.apply_to(&mut base)?;
        Ok(Self {
            model: base,
            stats: ck.stats,
            latent_scale: ck.latent_scale,
        })
    }

    pub fn load(base: impl AsRef<Path>, adapters: impl AsRef<Path>) -> Result<Self> {
        let (model, ck) = crate::checkpoint::load_model(base, adapters)?;
        Ok(Self {
            model,
            stats: ck.stats,
            latent_scale: ck.latent_scale,
        })
    }
}

pub struct TrainOutcome {
    /// Trained model with adapters attached and unmerged.
    pub model: DiTModel,
    pub stats: ControlStats,
    pub latent_scale: f64,
    /// Loss per optimiser step, base phase first.
    pub losses: Vec<f64>,
    /// Number of leading entries of `losses` from the base phase.
    pub base_steps: usize,
}

impl TrainOutcome {
    pub fn adapter_checkpoint(&self, cfg: &TrainConfig) -> AdapterCheckpoint {
        AdapterCheckpoint::from_model(&self.model, self.stats, cfg.lora_rank, cfg.lora_alpha, self.latent_scale)
    }

    pub fn trained(&self) -> TrainedModel {
        TrainedModel {
            model: self.model.clone(),
            stats: self.stats,
            latent_scale: self.latent_scale,
        }
    }
}

/// Loads the manifest and runs [`finetune_set`] from a fresh base.
pub fn finetune(manifest: &DatasetManifest, grid: &FrameGrid, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let set = TrainingSet::from_manifest(manifest, grid, cfg.model.d_text, None)?;
    finetune_set(&set, cfg, None, out_dir)
}

/// Base phase (all base weights and the projection train) followed by the
/// adaptation phase (base frozen, adapters and projection train).
///
/// With `out_dir`, writes the loss log, `base.ckpt` and `adapters.ckpt`.
pub fn finetune_set(
    set: &TrainingSet,
    cfg: &TrainConfig,
    base: Option<DiTModel>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = NoiseSchedule::linear(cfg.schedule_steps, NoiseSchedule::BETA_START, NoiseSchedule::BETA_END)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = match base {
        Some(m) => {
            if m.config != cfg.model {
                return Err(Error::InvalidArgument("base model configuration differs from the training config".into()));
            }
            m
        }
        None => DiTModel::new(cfg.model, rng.random())?,
    };
    model.remove_adapters();
    let mut losses = Vec::with_capacity(cfg.base_steps + cfg.steps);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    if cfg.base_steps > 0 {
        model.base_trainable = true;
        let mut opt = AdamW::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
        run_phase(&mut model, &mut opt, set, &schedule, cfg, &cfg.base_phase(), cfg.base_steps, &mut rng, &mut losses, |_, _| Ok(()))?;
    }
    model.base_trainable = false;
    if let Some(dir) = out_dir {
        save_base(&model, dir.join("base.ckpt"))?;
    }

    model.attach_adapters(cfg.lora_rank, cfg.lora_alpha, rng.random())?;
    let mut opt = AdamW::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
    let every = cfg.checkpoint_every;
    run_phase(&mut model, &mut opt, set, &schedule, cfg, &cfg.adapt_phase(), cfg.steps, &mut rng, &mut losses, |m, step| {
        if let (Some(dir), true) = (out_dir, every > 0 && step % every == 0 && step < cfg.steps) {
            let ck = AdapterCheckpoint::from_model(m, set.stats, cfg.lora_rank, cfg.lora_alpha, cfg.latent_scale);
            save_adapters(&ck, dir.join(format!("adapters-step{step:05}.ckpt")))?;
        }
        Ok(())
    })?;

    let outcome = TrainOutcome {
        model,
        stats: set.stats,
        latent_scale: cfg.latent_scale,
        losses,
        base_steps: cfg.base_steps,
    };
    if let Some(dir) = out_dir {
        save_adapters(&outcome.adapter_checkpoint(cfg), dir.join("adapters.ckpt"))?;
        write_loss_log(&outcome.losses, &dir.join(LOSS_LOG_FILE))?;
    }
    Ok(outcome)
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut DiTModel,
    opt: &mut AdamW,
    set: &TrainingSet,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    phase: &PhaseConfig,
    steps: usize,
    rng: &mut ChaCha8Rng,
    losses: &mut Vec<f64>,
    mut after_step: impl FnMut(&DiTModel, usize) -> Result<()>,
) -> Result<()> {
    for step in 1..=steps {
        let batch: Vec<&TrainExample> = (0..cfg.batch_size)
            .map(|_| &set.examples[rng.random_range(0..set.len())])
            .collect();
        let LossOutput { loss, mut grad } =
            training_loss(model, schedule, &batch, &set.stats, set.latent_rate, phase, rng)?;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!("loss diverged at step {step}")));
        }
        clip_grad(&mut grad, model.base_trainable, cfg.grad_clip);
        opt.lr = cosine_lr(cfg.lr, cfg.lr_final_ratio, step, steps);
        opt.step(model, &grad);
        losses.push(loss);
        after_step(model, step)?;
    }
    Ok(())
}

fn cosine_lr(lr: f64, final_ratio: f64, step: usize, steps: usize) -> f64 {
    let progress = if steps > 1 { (step - 1) as f64 / (steps - 1) as f64 } else { 0.0 };
    lr * (final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// `step\tloss` rows, steps counted from 1 across both phases.
pub fn write_loss_log(losses: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("step\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{}\t{l:.9e}", i + 1);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
