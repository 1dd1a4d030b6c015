//! Renders a small synthetic Foley corpus and prints its manifest.
//!
//! `cargo run --example synth_dataset -- [n_clips] [out_dir]`

use audio_palette::audio_io::{build_dataset, read_wav, DatasetManifest, MANIFEST_FILE};

fn run_in(dir: &std::path::Path, n: usize) -> audio_palette::Result<()> {
    let manifest = build_dataset(n, 7, dir)?;
    println!("{} clips in {}", manifest.len(), dir.display());
    for entry in &manifest.entries {
        let clip = read_wav(manifest.resolve(entry))?;
        println!("{:<14} {:>5.2} s  peak {:.2}  {}", entry.audio_path.display(), clip.duration(), clip.peak(), entry.caption);
    }
    let reread = DatasetManifest::read(dir.join(MANIFEST_FILE))?;
    assert_eq!(reread.entries, manifest.entries);
    Ok(())
}

pub fn run_example() -> audio_palette::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    run_in(dir.path(), 5)
}

#[allow(dead_code)]
fn main() -> audio_palette::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    match args.next() {
        Some(out) => run_in(std::path::Path::new(&out), n),
        None => run_example(),
    }
}
