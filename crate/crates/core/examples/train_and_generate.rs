//! Trains a small model on a handful of synthetic clips, then generates audio
//! that follows a training clip's controls and writes it to a WAV file.
//!
//! The default settings finish in seconds; pass a step count for a longer run:
//! `cargo run --example train_and_generate -- 2000`.

use audio_palette::audio_io::{dataset_specs, synth_clip, write_wav, caption_for, DatasetOptions, WavEncoding};
use audio_palette::codec;
use audio_palette::conditioning::embed_text_with_dim;
use audio_palette::diffusion::{finetune_set, prepare_controls, sample, NoiseSchedule, SampleRequest, TrainConfig, TrainingSet};
use audio_palette::dit::DiTConfig;
use audio_palette::eval::control_adherence;
use audio_palette::features::FrameGrid;

fn run(steps: usize, out_dir: &std::path::Path) -> audio_palette::Result<()> {
    let grid = FrameGrid::default();
    let specs = dataset_specs(4, 7, &DatasetOptions { duration: 0.5, ..DatasetOptions::default() });
    let clips = specs
        .iter()
        .map(|s| Ok((synth_clip(s)?, caption_for(&s.params))))
        .collect::<audio_palette::Result<Vec<_>>>()?;

    let mut cfg = TrainConfig {
        model: DiTConfig { d_model: 32, n_layers: 2, n_heads: 2, ..DiTConfig::default() },
        base_steps: steps,
        steps: steps / 2,
        batch_size: 4,
        crop_frames: 32,
        seed: 1,
        ..TrainConfig::default()
    };
    cfg.base_p_dyn = 0.15;
    cfg.base_p_timbre = 0.15;
    let set = TrainingSet::from_clips(&clips, &grid, cfg.model.d_text, None)?;
    let outcome = finetune_set(&set, &cfg, None, Some(out_dir))?;
    let first = outcome.losses[0];
    let last = outcome.losses[outcome.losses.len() - 1];
    println!("{} steps, loss {first:.3} -> {last:.3}", outcome.losses.len());

    let trained = outcome.trained();
    let (clip, caption) = &clips[3];
    let example = &set.examples[3];
    let n_frames = codec::latent_frames_for(clip.len());
    let ctrls = prepare_controls(&example.controls, &trained.stats, set.latent_rate, n_frames)?;
    let text = embed_text_with_dim(caption, cfg.model.d_text);
    let mut req = SampleRequest::new(&text, Some(&ctrls), n_frames, 3);
    req.steps = 20;
    req.latent_scale = trained.latent_scale;
    let mut latent = sample(&trained.model, &NoiseSchedule::default(), &req)?;
    latent.set_orig_len(clip.len())?;
    let generated = codec::decode(&latent)?;
    let path = out_dir.join("generated.wav");
    write_wav(&generated, &path, WavEncoding::Pcm16)?;
    let adherence = control_adherence(&example.controls, &generated, &grid)?;
    println!("'{caption}' -> {} (loudness r {:?})", path.display(), adherence.loudness);
    Ok(())
}

pub fn run_example() -> audio_palette::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    run(40, dir.path())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    match std::env::args().nth(1).and_then(|a| a.parse().ok()) {
        Some(steps) => {
            let dir = std::path::PathBuf::from("train_and_generate_out");
            std::fs::create_dir_all(&dir).expect("output directory");
            run(steps, &dir)
        }
        None => run_example(),
    }
}
