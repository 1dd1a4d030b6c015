//! The three-knob guidance "mixing board": combines the four conditional
//! noise predictions of a model under several scale settings.

use audio_palette::audio_io::{synth_clip, SynthParams, SynthSpec};
use audio_palette::conditioning::{embed_text, masked_rows, CondState};
use audio_palette::diffusion::{cfg_combine, predict_noise, prepare_controls, GuidanceMode, GuidanceScales, NoiseSchedule};
use audio_palette::dit::{DiTConfig, DiTModel};
use audio_palette::features::{extract_controls, ControlStats, FrameGrid};
use ndarray::Array2;
use rand::SeedableRng;

pub fn run_example() -> audio_palette::Result<()> {
    let clip = synth_clip(&SynthSpec::new(SynthParams::Bark { f0_hz: 450.0, count: 2 }, 0.5, 4))?;
    let ctrls = extract_controls(&clip, &FrameGrid::default())?;
    let n = audio_palette::codec::latent_frames_for(clip.len());
    let latent_ctrls = prepare_controls(&ctrls, &ControlStats::default(), 250.0, n)?;

    let mut model = DiTModel::new(DiTConfig::default(), 2)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    model.control_proj = audio_palette::conditioning::ProjectionWeights::random(&mut rng);
    let schedule = NoiseSchedule::default();
    let t = 600;
    let z = Array2::from_shape_fn((n, 64), |(i, j)| ((i + 3 * j) as f64).cos());
    let text = embed_text("a dog barking twice");
    let null = audio_palette::conditioning::TextEmbedding::null(text.dim());

    // One prediction per nested conditioning state: none, text, text+dynamics, everything.
    let mut eps = Vec::new();
    for (mask, txt) in CondState::BRANCHES.iter().zip([&null, &text, &text, &text]) {
        let bias = model.control_proj.forward(&masked_rows(&latent_ctrls, mask));
        eps.push(predict_noise(&model, &z, &bias, t, schedule.alpha_bar(t)?, txt, 0)?);
    }

    for (label, scales) in [
        ("unit scales (plain conditional)", GuidanceScales::new(1.0, 1.0, 1.0)),
        ("text only", GuidanceScales::new(1.0, 0.0, 0.0)),
        ("strong dynamics", GuidanceScales::new(1.0, 3.0, 1.0)),
        ("timbre boost", GuidanceScales::new(2.0, 1.0, 4.0)),
    ] {
        let guided = cfg_combine(&eps[0], &eps[1], &eps[2], &eps[3], &scales, GuidanceMode::Nested)?;
        let dist = (&guided - &eps[3]).mapv(|v| v * v).mean().unwrap_or(0.0).sqrt();
        println!("{label:<32} rms distance from the full prediction: {dist:.4}");
    }
    let unit = cfg_combine(&eps[0], &eps[1], &eps[2], &eps[3], &GuidanceScales::default(), GuidanceMode::Nested)?;
    assert!((&unit - &eps[3]).iter().all(|d| d.abs() < 1e-9));
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
