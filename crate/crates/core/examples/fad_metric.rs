//! Fréchet audio distance on the fixed stand-in embedder: identical sets score
//! zero, different sound kinds score higher than two draws of the same kind.

use audio_palette::audio_io::{synth_clip, SynthKind, SynthParams, SynthSpec};
use audio_palette::eval::{embed_audio, frechet_distance, EmbeddingStats, EMBEDDER_TAG};
use rand::SeedableRng;

fn embeddings(kind: SynthKind, n: usize, seed: u64) -> audio_palette::Result<Vec<ndarray::Array1<f64>>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let params = SynthParams::random(kind, &mut rng);
            embed_audio(&synth_clip(&SynthSpec::new(params, 0.5, seed * 1000 + i as u64))?)
        })
        .collect()
}

pub fn run_example() -> audio_palette::Result<()> {
    let n = 48;
    let rain_a = EmbeddingStats::fit(&embeddings(SynthKind::Rain, n, 1)?)?;
    let rain_b = EmbeddingStats::fit(&embeddings(SynthKind::Rain, n, 2)?)?;
    let siren = EmbeddingStats::fit(&embeddings(SynthKind::Siren, n, 3)?)?;
    let same = frechet_distance(&rain_a, &rain_a)?;
    let within = frechet_distance(&rain_a, &rain_b)?;
    let across = frechet_distance(&rain_a, &siren)?;
    println!("embedder {EMBEDDER_TAG}, {n} clips per set");
    println!("FAD(rain, rain)        = {same:.6}");
    println!("FAD(rain, other rain)  = {within:.3}");
    println!("FAD(rain, siren)       = {across:.3}");
    assert!(same.abs() < 1e-6 && within < across);
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
