//! Text embedding stand-in, control projection, additive fusion and the
//! conditioning-dropout masks shared by training and guidance.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::LATENT_CHANNELS;
use crate::error::{Error, Result};
use crate::features::{ControlSignals, CONTROL_CHANNELS};
use crate::nn::{Linear, ParamGroup, ParamMut, ParamRef, Params};

pub const DEFAULT_TEXT_DIM: usize = 64;

/// Salt mixed into token hashes so the vocabulary is fixed for all time.
const TOKEN_SALT: u64 = 0x4150_414c_4554_5445;

/// Token vectors from the frozen hashed embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    tokens: Array2<f64>,
    null: bool,
}

impl TextEmbedding {
    /// The single all-zeros token.
    pub fn null(dim: usize) -> Self {
        Self {
            tokens: Array2::zeros((1, dim)),
            null: true,
        }
    }

    pub fn from_tokens(tokens: Array2<f64>) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::InvalidArgument("text embedding needs at least one token".into()));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("text embedding is not finite".into()));
        }
        Ok(Self { tokens, null: false })
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Mean of the token vectors.
    pub fn pooled(&self) -> Array1<f64> {
        self.tokens.mean_axis(ndarray::Axis(0)).expect("at least one token")
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Unit vector for one token, seeded by its hash.
pub fn token_vector(token: &str, dim: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ TOKEN_SALT);
    let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Lower-cased whitespace tokens mapped to fixed pseudo-random unit vectors.
/// An empty caption gives the null embedding.
pub fn embed_text(caption: &str) -> TextEmbedding {
    embed_text_with_dim(caption, DEFAULT_TEXT_DIM)
}

pub fn embed_text_with_dim(caption: &str, dim: usize) -> TextEmbedding {
    let tokens: Vec<String> = caption.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return TextEmbedding::null(dim);
    }
    let mut m = Array2::zeros((tokens.len(), dim));
    for (mut row, tok) in m.rows_mut().into_iter().zip(&tokens) {
        row.assign(&token_vector(tok, dim));
    }
    TextEmbedding { tokens: m, null: false }
}

/// Which conditioning sources are kept for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CondState {
    pub text: bool,
    pub loudness: bool,
    pub pitch: bool,
    pub centroid: bool,
    pub timbre: bool,
}

impl CondState {
    pub const UNCONDITIONAL: CondState = CondState::grouped(false, false, false);
    pub const TEXT: CondState = CondState::grouped(true, false, false);
    pub const TEXT_DYNAMICS: CondState = CondState::grouped(true, true, false);
    pub const FULL: CondState = CondState::grouped(true, true, true);

    /// The guidance branches in nesting order.
    pub const BRANCHES: [CondState; 4] = [
        CondState::UNCONDITIONAL,
        CondState::TEXT,
        CondState::TEXT_DYNAMICS,
        CondState::FULL,
    ];

    pub const fn grouped(text: bool, dynamics: bool, timbre: bool) -> Self {
        Self {
            text,
            loudness: dynamics,
            pitch: dynamics,
            centroid: dynamics,
            timbre,
        }
    }

    /// True when all three dynamics signals are kept.
    pub fn dynamics(&self) -> bool {
        self.loudness && self.pitch && self.centroid
    }

    pub fn any_control(&self) -> bool {
        self.loudness || self.pitch || self.centroid || self.timbre
    }

    /// Kept in both masks.
    pub fn intersect(&self, other: &CondState) -> CondState {
        CondState {
            text: self.text && other.text,
            loudness: self.loudness && other.loudness,
            pitch: self.pitch && other.pitch,
            centroid: self.centroid && other.centroid,
            timbre: self.timbre && other.timbre,
        }
    }

    /// Per-channel keep flags in projection order.
    pub fn channel_mask(&self) -> [bool; CONTROL_CHANNELS] {
        let mut m = [self.timbre; CONTROL_CHANNELS];
        m[0] = self.loudness;
        m[1] = self.pitch;
        m[2] = self.centroid;
        m
    }
}

/// Independent Bernoulli drops for the text, dynamics and timbre groups,
/// drawn in that order. `true` in the result means "kept".
pub fn sample_dropout(rng: &mut impl Rng, p_text: f64, p_dyn: f64, p_timbre: f64) -> Result<CondState> {
    check_probs(&[p_text, p_dyn, p_timbre])?;
    let text = !drop(rng, p_text);
    let dynamics = !drop(rng, p_dyn);
    let timbre = !drop(rng, p_timbre);
    Ok(CondState::grouped(text, dynamics, timbre))
}

/// Like [`sample_dropout`] but with independent draws for loudness, pitch
/// and centroid, all at `p_signal`.
pub fn sample_dropout_per_signal(rng: &mut impl Rng, p_text: f64, p_signal: f64, p_timbre: f64) -> Result<CondState> {
    check_probs(&[p_text, p_signal, p_timbre])?;
    Ok(CondState {
        text: !drop(rng, p_text),
        loudness: !drop(rng, p_signal),
        pitch: !drop(rng, p_signal),
        centroid: !drop(rng, p_signal),
        timbre: !drop(rng, p_timbre),
    })
}

fn drop(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn check_probs(ps: &[f64]) -> Result<()> {
    match ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// The trainable 16 -> 64 linear map from control rows to latent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights(pub Linear);

impl ProjectionWeights {
    /// Zero-initialised, so a fresh projection leaves the latents untouched.
    pub fn zeros() -> Self {
        Self(Linear::zeros(CONTROL_CHANNELS, LATENT_CHANNELS))
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self(Linear::init(CONTROL_CHANNELS, LATENT_CHANNELS, rng))
    }

    pub fn num_params(&self) -> usize {
        self.0.num_params()
    }

    pub fn forward(&self, rows: &Array2<f64>) -> Array2<f64> {
        self.0.forward(rows)
    }

    pub fn backward(&self, rows: &Array2<f64>, d_emb: &Array2<f64>, grad: &mut ProjectionWeights) {
        self.0.backward(rows, d_emb, Some(&mut grad.0));
    }
}

impl Params for ProjectionWeights {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.0.collect_group(prefix, ParamGroup::Projection, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.0.collect_group_mut(prefix, ParamGroup::Projection, out);
    }
}

/// Control rows with dropped groups zeroed: `(frames, 16)`.
pub fn masked_rows(ctrls: &ControlSignals, mask: &CondState) -> Array2<f64> {
    let keep = mask.channel_mask();
    let rows = ctrls.rows();
    Array2::from_shape_fn((rows.len(), CONTROL_CHANNELS), |(f, c)| if keep[c] { rows[f][c] } else { 0.0 })
}

/// Projects controls (already on the latent grid) to one 64-vector per latent frame.
pub fn project_controls(
    ctrls: &ControlSignals,
    weights: &ProjectionWeights,
    mask: &CondState,
    latent_frames: usize,
) -> Result<Array2<f64>> {
    if ctrls.n_frames() != latent_frames {
        return Err(Error::shape("control frames", latent_frames, ctrls.n_frames()));
    }
    Ok(weights.forward(&masked_rows(ctrls, mask)))
}

/// Element-wise sum of latents and control embedding.
pub fn fuse(z: &Array2<f64>, ctrl_emb: &Array2<f64>) -> Result<Array2<f64>> {
    if z.dim() != ctrl_emb.dim() {
        return Err(Error::shape("fuse", format!("{:?}", z.dim()), format!("{:?}", ctrl_emb.dim())));
    }
    Ok(z + ctrl_emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_MFCC;

    fn controls(n: usize, seed: u64) -> ControlSignals {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || rng.random_range(-2.0..2.0);
        ControlSignals {
            loudness: (0..n).map(|_| g()).collect(),
            pitch_hz: (0..n).map(|_| g()).collect(),
            centroid_hz: (0..n).map(|_| g()).collect(),
            mfcc: (0..n).map(|_| std::array::from_fn::<f64, N_MFCC, _>(|_| g())).collect(),
            frame_rate: 250.0,
        }
    }

    #[test]
    fn text_embedding_is_deterministic_and_null_for_empty() {
        assert_eq!(embed_text("a dog barking"), embed_text("a dog barking"));
        let e = embed_text("   ");
        assert!(e.is_null());
        assert_eq!(e.tokens().dim(), (1, DEFAULT_TEXT_DIM));
        assert!(e.tokens().iter().all(|&v| v == 0.0));
        let v = token_vector("siren", 64);
        assert!((v.dot(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_controls_with_zero_bias_project_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = ProjectionWeights::random(&mut rng);
        w.0.bias.fill(0.0);
        let mut c = controls(5, 2);
        c.loudness.fill(0.0);
        c.pitch_hz.fill(0.0);
        c.centroid_hz.fill(0.0);
        c.mfcc.iter_mut().for_each(|m| m.fill(0.0));
        let e = project_controls(&c, &w, &CondState::FULL, 5).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = ProjectionWeights::random(&mut rng);
        w.0.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let (a, c) = (controls(6, 4), controls(6, 5));
        let sum = ControlSignals::from_rows(
            &a.rows().iter().zip(c.rows()).map(|(x, y)| std::array::from_fn(|i| x[i] + y[i])).collect::<Vec<_>>(),
            250.0,
        );
        let pa = project_controls(&a, &w, &CondState::FULL, 6).unwrap();
        let pc = project_controls(&c, &w, &CondState::FULL, 6).unwrap();
        let ps = project_controls(&sum, &w, &CondState::FULL, 6).unwrap();
        let lhs = &pa + &pc - &w.0.bias;
        assert!(lhs.iter().zip(&ps).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn dropping_everything_leaves_only_the_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut w = ProjectionWeights::random(&mut rng);
        w.0.bias.fill(0.0);
        let e = project_controls(&controls(4, 7), &w, &CondState::UNCONDITIONAL, 4).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        assert!(project_controls(&controls(4, 7), &w, &CondState::FULL, 5).is_err());
    }

    #[test]
    fn masking_is_idempotent() {
        let c = controls(3, 8);
        let m = CondState::TEXT_DYNAMICS;
        let once = masked_rows(&c, &m);
        let rows: Vec<[f64; CONTROL_CHANNELS]> =
            once.rows().into_iter().map(|r| std::array::from_fn(|i| r[i])).collect();
        let twice = masked_rows(&ControlSignals::from_rows(&rows, 250.0), &m);
        assert_eq!(once, twice);
    }

    #[test]
    fn fuse_algebra() {
        let z = Array2::from_shape_fn((3, 64), |(i, j)| (i * 64 + j) as f64 * 0.01);
        let c1 = Array2::from_shape_fn((3, 64), |(i, j)| (i as f64 - j as f64) * 0.1);
        let c2 = Array2::from_shape_fn((3, 64), |(i, j)| ((i * j) % 7) as f64);
        assert_eq!(fuse(&z, &Array2::zeros((3, 64))).unwrap(), z);
        assert_eq!(fuse(&z, &c1).unwrap(), fuse(&c1, &z).unwrap());
        let nested = fuse(&fuse(&z, &c1).unwrap(), &c2).unwrap();
        let flat = fuse(&z, &(&c1 + &c2)).unwrap();
        assert!(nested.iter().zip(&flat).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(fuse(&z, &Array2::zeros((2, 64))).is_err());
    }

    #[test]
    fn dropout_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(sample_dropout(&mut rng, 0.0, 0.0, 0.0).unwrap(), CondState::FULL);
            assert_eq!(sample_dropout(&mut rng, 1.0, 1.0, 1.0).unwrap(), CondState::UNCONDITIONAL);
        }
        assert!(sample_dropout(&mut rng, 1.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn every_branch_is_reachable_by_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            let s = sample_dropout(&mut rng, 0.3, 0.3, 0.3).unwrap();
            seen.insert(s);
        }
        for b in CondState::BRANCHES {
            assert!(seen.contains(&b), "{b:?}");
        }
    }
}
