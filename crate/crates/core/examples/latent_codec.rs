//! Encodes a clip into 64-channel latent frames and decodes it back exactly.

use audio_palette::audio_io::{synth_clip, SynthParams, SynthSpec};
use audio_palette::codec::{FrameStack, LatentCodec, LATENT_CHANNELS};

pub fn run_example() -> audio_palette::Result<()> {
    let spec = SynthSpec::new(SynthParams::Rain { cutoff_hz: 3000.0, drops_per_s: 20.0 }, 0.7, 3);
    let clip = synth_clip(&spec)?;
    let codec = FrameStack;
    let latent = codec.encode(&clip)?;
    println!(
        "{} samples -> {} frames x {LATENT_CHANNELS} channels at {} Hz",
        clip.len(),
        latent.n_frames(),
        latent.latent_rate()
    );
    let back = codec.decode(&latent)?;
    assert_eq!(back.samples(), clip.samples());
    println!("decode(encode(x)) is bit-identical");
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
