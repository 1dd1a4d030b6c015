//! Runs the four-configuration conditioning ablation on a small trained model
//! and prints the report table.

use audio_palette::audio_io::{caption_for, dataset_specs, synth_clip, DatasetOptions};
use audio_palette::diffusion::{finetune_set, TrainConfig, TrainingSet};
use audio_palette::dit::DiTConfig;
use audio_palette::eval::{report_tsv, run_ablation, AblationConfig, EvalItem, EvalOptions};
use audio_palette::features::{extract_controls, FrameGrid};

pub fn run_example() -> audio_palette::Result<()> {
    let grid = FrameGrid::default();
    let specs = dataset_specs(5, 11, &DatasetOptions { duration: 0.5, ..DatasetOptions::default() });
    let mut clips = Vec::new();
    let mut items = Vec::new();
    for s in &specs {
        let clip = synth_clip(s)?;
        let caption = caption_for(&s.params);
        items.push(EvalItem { controls: extract_controls(&clip, &grid)?, clip: clip.clone(), caption: caption.clone() });
        clips.push((clip, caption));
    }
    let cfg = TrainConfig {
        model: DiTConfig { d_model: 32, n_layers: 2, n_heads: 2, ..DiTConfig::default() },
        base_steps: 20,
        steps: 10,
        batch_size: 4,
        crop_frames: 32,
        ..TrainConfig::default()
    };
    let set = TrainingSet::from_clips(&clips, &grid, cfg.model.d_text, None)?;
    let trained = finetune_set(&set, &cfg, None, None)?.trained();
    let models: Vec<_> = AblationConfig::ALL.iter().map(|&c| (c, &trained)).collect();
    let opts = EvalOptions { steps: 10, ..EvalOptions::default() };
    let reports = run_ablation(&items, &models, &opts)?;
    print!("{}", report_tsv(&reports));
    assert_eq!(reports.len(), 4);
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
