//! Attaches low-rank adapters to the query and value projections of a DiT,
//! reports the trainable fraction and checks that merging preserves outputs.

use audio_palette::conditioning::embed_text;
use audio_palette::dit::{DiTConfig, DiTModel};
use ndarray::Array2;

pub fn run_example() -> audio_palette::Result<()> {
    let mut model = DiTModel::new(DiTConfig::default(), 0)?;
    let z = Array2::from_shape_fn((40, 64), |(i, j)| ((i * 7 + j * 3) as f64 * 0.1).sin());
    let text = embed_text("a dog barking twice");
    let before = model.forward(&z, 500, &text)?;

    model.attach_adapters(4, 4.0, 1)?;
    let counts = model.count_params();
    println!(
        "{} parameters, {} trainable ({:.2}%) across {} adapter sites",
        counts.total,
        counts.trainable,
        100.0 * counts.fraction(),
        model.adapter_sites().len()
    );
    assert_eq!(model.forward(&z, 500, &text)?, before, "zero-initialised B leaves the model unchanged");

    // Give the adapters some weight, then fold them into the base matrices.
    for (_, site) in model.adapter_sites_mut() {
        if let Some(ad) = site.adapter.as_mut() {
            ad.b.mapv_inplace(|_| 0.01);
        }
    }
    let adapted = model.forward(&z, 500, &text)?;
    model.merge_adapters()?;
    let merged = model.forward(&z, 500, &text)?;
    let err = (&adapted - &merged).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
    println!("max |adapter - merged| = {err:.2e}");
    assert!(err < 1e-9);
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
