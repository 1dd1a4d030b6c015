//! Extracts loudness, pitch, centroid and MFCCs from a rising siren, applies
//! the training-time transforms and round-trips the APCS file format.

use audio_palette::audio_io::{synth_clip, SynthParams, SynthSpec};
use audio_palette::features::{
    extract_controls, median_filter, normalize_controls, read_apcs, resample_controls, write_apcs, ControlStats, FrameGrid,
};

pub fn run_example() -> audio_palette::Result<()> {
    let spec = SynthSpec::new(SynthParams::Siren { f_start: 300.0, f_end: 900.0 }, 1.0, 1);
    let clip = synth_clip(&spec)?;
    let grid = FrameGrid::default();
    let ctrls = extract_controls(&clip, &grid)?;
    let n = ctrls.n_frames();
    println!("{n} frames at {:.1} Hz", ctrls.frame_rate);
    for f in [2, n / 2, n - 3] {
        println!(
            "frame {f:>2}: rms {:.3}  pitch {:>6.1} Hz  centroid {:>6.1} Hz  mfcc0 {:.2}",
            ctrls.loudness[f], ctrls.pitch_hz[f], ctrls.centroid_hz[f], ctrls.mfcc[f][0]
        );
    }

    let smoothed = median_filter(&ctrls.centroid_hz, 9)?;
    println!("centroid after a 9-frame median: {:.1} Hz at the midpoint", smoothed[n / 2]);

    let latent = resample_controls(&ctrls, 250.0, 250)?;
    let normed = normalize_controls(&latent, &ControlStats::fit(std::slice::from_ref(&latent)))?;
    println!("resampled to {} latent frames; normalised loudness starts at {:.2}", normed.n_frames(), normed.loudness[0]);

    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("siren.apcs");
    write_apcs(&ctrls, &path)?;
    let back = read_apcs(&path)?;
    assert_eq!(back, ctrls.quantized_f32());
    println!("APCS round trip ok ({} bytes)", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    Ok(())
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    run_example()
}
