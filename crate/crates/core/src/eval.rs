//! Objective metrics: Fréchet distance between embedding Gaussians, a
//! text/audio cosine score, control adherence and the ablation harness.
//!
//! The embedders are fixed and seeded stand-ins, so scores are reproducible
//! but only comparable with other runs of this crate.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio_io::{read_wav, AudioClip, DatasetManifest};
use crate::checkpoint::{load_adapters, load_base};
use crate::codec;
use crate::conditioning::{embed_text_with_dim, CondState, TextEmbedding};
use crate::diffusion::{prepare_controls, sample, GuidanceMode, GuidanceScales, NoiseSchedule, SampleRequest, TrainedModel};
use crate::error::{Error, Result};
use crate::features::spectral::Spectrogram;
use crate::features::{extract_controls, resample_controls, ControlSignals, FrameGrid, N_MFCC};

pub const EMBED_BANDS: usize = 16;
pub const EMBED_DIM: usize = 2 * EMBED_BANDS;
/// Energy floor inside the log of the embedding.
pub const EMBED_FLOOR: f64 = 1e-10;
/// Identifies the stand-in embedders in reports.
pub const EMBEDDER_TAG: &str = "logmel16-meanstd";

const PROJECTION_SEED: u64 = 0x00C1_A9E5;
const NEGATIVE_EIGEN_TOL: f64 = 1e-8;

/// Per-band mean then per-band std of 16 log-mel energies over frames.
pub fn embed_audio(clip: &AudioClip) -> Result<Array1<f64>> {
    if clip.is_empty() {
        return Err(Error::InvalidArgument("cannot embed an empty clip".into()));
    }
    let grid = FrameGrid {
        sample_rate: clip.sample_rate(),
        ..FrameGrid::default()
    };
    let logs = Spectrogram::new(clip, &grid).log_mel(EMBED_BANDS, EMBED_FLOOR);
    let n = logs.len() as f64;
    let mut out = Array1::zeros(EMBED_DIM);
    for b in 0..EMBED_BANDS {
        let mean = logs.iter().map(|f| f[b]).sum::<f64>() / n;
        let var = logs.iter().map(|f| (f[b] - mean).powi(2)).sum::<f64>() / n;
        out[b] = mean;
        out[EMBED_BANDS + b] = var.sqrt();
    }
    Ok(out)
}

/// Gaussian fitted to a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub n: usize,
}

impl EmbeddingStats {
    /// Sample mean and unbiased covariance; needs at least two embeddings.
    pub fn fit(embeddings: &[Array1<f64>]) -> Result<Self> {
        if embeddings.len() < 2 {
            return Err(Error::InvalidArgument("need at least two embeddings".into()));
        }
        let d = embeddings[0].len();
        if let Some(e) = embeddings.iter().find(|e| e.len() != d) {
            return Err(Error::shape("embedding width", d, e.len()));
        }
        let n = embeddings.len();
        let mut mean = Array1::zeros(d);
        for e in embeddings {
            mean += e;
        }
        mean /= n as f64;
        let mut cov = Array2::zeros((d, d));
        for e in embeddings {
            let c = e - &mean;
            for i in 0..d {
                for j in 0..d {
                    cov[[i, j]] += c[i] * c[j];
                }
            }
        }
        cov /= (n - 1) as f64;
        Ok(Self { mean, cov, n })
    }

    pub fn new(mean: Array1<f64>, cov: Array2<f64>, n: usize) -> Result<Self> {
        let s = Self { mean, cov, n };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.cov.dim() != (d, d) {
            return Err(Error::shape("covariance", format!("{d}x{d}"), format!("{:?}", self.cov.dim())));
        }
        for i in 0..d {
            for j in 0..i {
                if (self.cov[[i, j]] - self.cov[[j, i]]).abs() > 1e-9 {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Eigenvalues clamped at zero; anything below `-tol · max(1, max|λ|)` is an error.
fn clamped_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < -NEGATIVE_EIGEN_TOL * scale {
            return Err(Error::NotPsd(*v));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn sqrtm_dm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = clamped_eigen(sym)?;
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.sqrt());
    Ok(eig.recompose())
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrtm_psd(m: &Array2<f64>) -> Result<Array2<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape("square matrix", m.nrows(), m.ncols()));
    }
    let r = sqrtm_dm(&to_dmatrix(m))?;
    Ok(Array2::from_shape_fn(m.dim(), |(i, j)| r[(i, j)]))
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, floored at zero.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::shape("embedding width", a.dim(), b.dim()));
    }
    let mean_term: f64 = (&a.mean - &b.mean).iter().map(|v| v * v).sum();
    let sa = to_dmatrix(&a.cov);
    let sb = to_dmatrix(&b.cov);
    let ra = sqrtm_dm(&sa)?;
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clamped_eigen(inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    Ok((mean_term + sa.trace() + sb.trace() - 2.0 * cross).max(0.0))
}

/// Cosine of two vectors.
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("vector length", a.len(), b.len()));
    }
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

fn fixed_matrix(rows: usize, cols: usize, salt: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED ^ salt);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

/// Cosine between the pooled text tokens and an audio embedding, each mapped
/// into a shared 32-d space by a fixed seeded matrix.
pub fn similarity_score(text: &TextEmbedding, audio_embedding: &Array1<f64>) -> Result<f64> {
    if audio_embedding.len() != EMBED_DIM {
        return Err(Error::shape("audio embedding", EMBED_DIM, audio_embedding.len()));
    }
    let t = fixed_matrix(EMBED_DIM, text.dim(), 1).dot(&text.pooled());
    let a = fixed_matrix(EMBED_DIM, EMBED_DIM, 2).dot(audio_embedding);
    cosine(&t, &a)
}

/// Pearson correlation; `None` for fewer than two points or a constant series.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let tiny = |s: f64, m: f64| s <= 1e-24 * n * (1.0 + m * m);
    if tiny(saa, ma) || tiny(sbb, mb) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Per-track correlation. `None` marks an undefined track (constant, or too
/// few jointly voiced frames for pitch).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Adherence {
    pub loudness: Option<f64>,
    pub pitch: Option<f64>,
    pub centroid: Option<f64>,
    /// Mean over the defined per-coefficient correlations.
    pub mfcc: Option<f64>,
}

impl Adherence {
    /// Track-wise mean over the defined values.
    pub fn mean(items: &[Adherence]) -> Adherence {
        let avg = |f: fn(&Adherence) -> Option<f64>| {
            let vals: Vec<f64> = items.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Adherence {
            loudness: avg(|a| a.loudness),
            pitch: avg(|a| a.pitch),
            centroid: avg(|a| a.centroid),
            mfcc: avg(|a| a.mfcc),
        }
    }
}

/// Correlates two control sets on the grid of `target`.
pub fn compare_controls(target: &ControlSignals, other: &ControlSignals) -> Result<Adherence> {
    target.validate()?;
    let other = resample_controls(other, target.frame_rate, target.n_frames())?;
    let (tp, op): (Vec<f64>, Vec<f64>) = target
        .pitch_hz
        .iter()
        .zip(&other.pitch_hz)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let per_coef: Vec<f64> = (0..N_MFCC)
        .filter_map(|k| {
            let a: Vec<f64> = target.mfcc.iter().map(|m| m[k]).collect();
            let b: Vec<f64> = other.mfcc.iter().map(|m| m[k]).collect();
            pearson(&a, &b)
        })
        .collect();
    Ok(Adherence {
        loudness: pearson(&target.loudness, &other.loudness),
        pitch: pearson(&tp, &op),
        centroid: pearson(&target.centroid_hz, &other.centroid_hz),
        mfcc: (!per_coef.is_empty()).then(|| per_coef.iter().sum::<f64>() / per_coef.len() as f64),
    })
}

/// Extracts controls from `generated` on `grid` and correlates them with `target`.
pub fn control_adherence(target: &ControlSignals, generated: &AudioClip, grid: &FrameGrid) -> Result<Adherence> {
    compare_controls(target, &extract_controls(generated, grid)?)
}

/// The four conditioning subsets of the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationConfig {
    TextOnly,
    Dynamics,
    TimbreOnly,
    Full,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [Self::TextOnly, Self::Dynamics, Self::TimbreOnly, Self::Full];

    pub fn label(self) -> &'static str {
        match self {
            Self::TextOnly => "Baseline (Text Only)",
            Self::Dynamics => "+ Loudness, Pitch, Centroid",
            Self::TimbreOnly => "+ Timbre (MFCCs) only",
            Self::Full => "Full Model (All Signals)",
        }
    }

    /// Short name for file names and CLI flags.
    pub fn key(self) -> &'static str {
        match self {
            Self::TextOnly => "text",
            Self::Dynamics => "dynamics",
            Self::TimbreOnly => "timbre",
            Self::Full => "full",
        }
    }

    /// Conditioning groups this configuration is trained and sampled with.
    pub fn allowed(self) -> CondState {
        match self {
            Self::TextOnly => CondState::TEXT,
            Self::Dynamics => CondState::TEXT_DYNAMICS,
            Self::TimbreOnly => CondState::grouped(true, false, true),
            Self::Full => CondState::FULL,
        }
    }

    /// Guidance scales with the given text scale; unit scales for the allowed controls.
    pub fn scales(self, s_text: f64) -> GuidanceScales {
        let a = self.allowed();
        GuidanceScales::new(s_text, if a.dynamics() || a.timbre { 1.0 } else { 0.0 }, if a.timbre { 1.0 } else { 0.0 })
    }
}

impl std::str::FromStr for AblationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.key() == s).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown configuration '{s}' (expected text, dynamics, timbre or full)"))
        })
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: String,
    pub fad: f64,
    pub clap_like: f64,
    pub adherence: Adherence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub grid: FrameGrid,
    pub steps: usize,
    pub s_text: f64,
    pub mode: GuidanceMode,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid: FrameGrid::default(),
            steps: 50,
            s_text: 1.0,
            mode: GuidanceMode::Nested,
            seed: 0,
        }
    }
}

/// A held-out clip with its caption and extracted controls.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub clip: AudioClip,
    pub caption: String,
    pub controls: ControlSignals,
}

pub fn load_eval_items(manifest: &DatasetManifest, grid: &FrameGrid) -> Result<Vec<EvalItem>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let clip = read_wav(manifest.resolve(e))?;
            let controls = extract_controls(&clip, grid)?;
            Ok(EvalItem {
                clip,
                caption: e.caption.clone(),
                controls,
            })
        })
        .collect()
}

/// Generates one clip per item with `model` under `config` and scores the set.
pub fn evaluate_config(
    model: &TrainedModel,
    config: AblationConfig,
    items: &[EvalItem],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (generated, _) = generate_for_items(model, config, items, opts)?;
    score(config.label(), items, &generated, &opts.grid, model.model.config.d_text)
}

/// Generated clips for each item plus their guidance scales.
pub fn generate_for_items(
    trained: &TrainedModel,
    config: AblationConfig,
    items: &[EvalItem],
    opts: &EvalOptions,
) -> Result<(Vec<AudioClip>, GuidanceScales)> {
    let model = &trained.model;
    let schedule = NoiseSchedule::linear(model.config.n_timesteps, NoiseSchedule::BETA_START, NoiseSchedule::BETA_END)?;
    let scales = config.scales(opts.s_text);
    let clips = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let n_frames = codec::latent_frames_for(item.clip.len());
            let rate = codec::latent_rate(item.clip.sample_rate());
            let ctrls = prepare_controls(&item.controls, &trained.stats, rate, n_frames)?;
            let text = embed_text_with_dim(&item.caption, model.config.d_text);
            let mut req = SampleRequest::new(&text, Some(&ctrls), n_frames, opts.seed.wrapping_add(i as u64));
            req.scales = scales;
            req.mode = opts.mode;
            req.steps = opts.steps;
            req.allowed = config.allowed();
            req.sample_rate = item.clip.sample_rate();
            req.latent_scale = trained.latent_scale;
            let mut latent = sample(model, &schedule, &req)?;
            latent.set_orig_len(item.clip.len())?;
            codec::decode(&latent)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clips, scales))
}

/// FAD between real and generated sets, mean text/audio score and mean adherence.
pub fn score(label: &str, items: &[EvalItem], generated: &[AudioClip], grid: &FrameGrid, text_dim: usize) -> Result<EvalReport> {
    if items.len() != generated.len() {
        return Err(Error::shape("generated clips", items.len(), generated.len()));
    }
    let real: Vec<Array1<f64>> = items.iter().map(|i| embed_audio(&i.clip)).collect::<Result<_>>()?;
    let fake: Vec<Array1<f64>> = generated.iter().map(embed_audio).collect::<Result<_>>()?;
    let fad = frechet_distance(&EmbeddingStats::fit(&real)?, &EmbeddingStats::fit(&fake)?)?;
    let mut clap = 0.0;
    let mut adherence = Vec::with_capacity(items.len());
    for (item, (clip, emb)) in items.iter().zip(generated.iter().zip(&fake)) {
        clap += similarity_score(&embed_text_with_dim(&item.caption, text_dim), emb)? / items.len() as f64;
        adherence.push(control_adherence(&item.controls, clip, grid)?);
    }
    Ok(EvalReport {
        config: label.to_string(),
        fad,
        clap_like: clap,
        adherence: Adherence::mean(&adherence),
    })
}

/// One report per configuration, in the order given.
pub fn run_ablation(
    items: &[EvalItem],
    models: &[(AblationConfig, &TrainedModel)],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    models
        .iter()
        .map(|(cfg, model)| evaluate_config(model, *cfg, items, opts))
        .collect()
}

/// Loads a shared base and one adapter checkpoint per configuration and runs the ablation.
pub fn run_ablation_from_checkpoints(
    manifest: &DatasetManifest,
    base: &Path,
    adapters: &[(AblationConfig, &Path)],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    for (_, p) in adapters {
        if !p.is_file() {
            return Err(Error::Missing(format!("checkpoint {}", p.display())));
        }
    }
    if !base.is_file() {
        return Err(Error::Missing(format!("checkpoint {}", base.display())));
    }
    let base_model = load_base(base)?;
    let items = load_eval_items(manifest, &opts.grid)?;
    adapters
        .iter()
        .map(|(cfg, path)| {
            let ck = load_adapters(path)?;
            let trained = TrainedModel::from_checkpoint(base_model.clone(), &ck)?;
            evaluate_config(&trained, *cfg, &items, opts)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |r| format!("{r:.6}"))
}

/// Tab-separated table with a header row; undefined correlations print as `NA`.
pub fn report_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("config\tfad\tclap_like\tr_loud\tr_pitch\tr_centroid\tr_mfcc\n");
    for r in reports {
        let a = &r.adherence;
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            r.config,
            r.fad,
            r.clap_like,
            fmt_opt(a.loudness),
            fmt_opt(a.pitch),
            fmt_opt(a.centroid),
            fmt_opt(a.mfcc)
        );
    }
    out
}
