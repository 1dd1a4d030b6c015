//! Synthetic dataset generation and the TSV manifest that indexes it.
//!
//! Layout on disk: `clips/NNNN.wav` plus `manifest.tsv`, one
//! `path<TAB>caption<TAB>tag` record per line with paths relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{synth_clip, SynthKind, SynthParams, SynthSpec};
use super::wav::{write_wav, WavEncoding};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub audio_path: PathBuf,
    pub caption: String,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<DatasetEntry>) -> Result<Self> {
        let manifest = Self {
            root: root.into(),
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !seen.insert(&e.audio_path) {
                return Err(Error::format(
                    "manifest",
                    format!("duplicate path {}", e.audio_path.display()),
                ));
            }
            if e.caption.trim().is_empty() {
                return Err(Error::format("manifest", format!("entry {i} has an empty caption")));
            }
            let fields = [e.audio_path.to_string_lossy().into_owned(), e.caption.clone(), e.tag.clone()];
            if fields.iter().any(|f| f.contains(['\t', '\n', '\r'])) {
                return Err(Error::format("manifest", format!("entry {i} contains a tab or newline")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &DatasetEntry) -> PathBuf {
        self.root.join(&entry.audio_path)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.audio_path.display(), e.caption, e.tag))
            .collect()
    }

    pub fn parse_tsv(root: impl Into<PathBuf>, text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, line)| {
                let fields: Vec<&str> = line.split('\t').collect();
                match fields.as_slice() {
                    [path, caption, tag] => Ok(DatasetEntry {
                        audio_path: PathBuf::from(path),
                        caption: caption.to_string(),
                        tag: tag.to_string(),
                    }),
                    _ => Err(Error::format(
                        "manifest",
                        format!("line {} has {} fields, expected 3", n + 1, fields.len()),
                    )),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(root, entries)
    }

    /// Reads `dir/manifest.tsv`, or the file itself when given a file path.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_tsv(root, &text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    /// Clip length in seconds.
    pub duration: f64,
    pub sample_rate: u32,
    /// Restrict generation to these kinds (cycled in order).
    pub kinds: &'static [SynthKind],
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            duration: 1.0,
            sample_rate: super::DEFAULT_SAMPLE_RATE,
            kinds: &SynthKind::ALL,
        }
    }
}

/// Templated caption for a clip.
pub fn caption_for(params: &SynthParams) -> String {
    match *params {
        SynthParams::Footsteps { rate_hz, .. } => {
            let pace = if rate_hz > 2.75 { "fast" } else { "slow" };
            format!("{pace} footsteps on a wooden floor")
        }
        SynthParams::Siren { f_start, f_end } => {
            let dir = if f_end > f_start { "rising" } else { "falling" };
            format!("a siren with a {dir} pitch")
        }
        SynthParams::Rain { drops_per_s, .. } => {
            let weight = if drops_per_s > 22.0 { "heavy" } else { "light" };
            format!("{weight} rain falling on a roof")
        }
        SynthParams::Bark { count, .. } => {
            let times = match count {
                1 => "once",
                2 => "twice",
                3 => "three times",
                _ => "four times",
            };
            format!("a dog barking {times}")
        }
        SynthParams::Chirp { rate_hz, .. } => {
            let pace = if rate_hz > 5.0 { "rapidly" } else { "slowly" };
            format!("a small bird chirping {pace}")
        }
    }
}

/// The clip specs `build_dataset_with` renders, without touching the disk.
pub fn dataset_specs(n_clips: usize, seed: u64, opts: &DatasetOptions) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_clips)
        .map(|i| {
            let kind = opts.kinds[i % opts.kinds.len()];
            let params = SynthParams::random(kind, &mut rng);
            SynthSpec {
                params,
                duration: opts.duration,
                sample_rate: opts.sample_rate,
                seed: rng.random(),
            }
        })
        .collect()
}

pub fn build_dataset(n_clips: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    build_dataset_with(n_clips, seed, out_dir, &DatasetOptions::default())
}

pub fn build_dataset_with(
    n_clips: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    opts: &DatasetOptions,
) -> Result<DatasetManifest> {
    if n_clips == 0 {
        return Err(Error::InvalidArgument("n_clips must be at least 1".into()));
    }
    if opts.kinds.is_empty() {
        return Err(Error::InvalidArgument("no sound kinds selected".into()));
    }
    let out_dir = out_dir.as_ref();
    let clip_dir = out_dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut entries = Vec::with_capacity(n_clips);
    for (i, spec) in dataset_specs(n_clips, seed, opts).iter().enumerate() {
        let rel = PathBuf::from("clips").join(format!("{i:04}.wav"));
        let clip = synth_clip(spec)?;
        write_wav(&clip, out_dir.join(&rel), WavEncoding::Float32)?;
        entries.push(DatasetEntry {
            audio_path: rel,
            caption: caption_for(&spec.params),
            tag: spec.kind().name().to_string(),
        });
    }
    let manifest = DatasetManifest::new(out_dir, entries)?;
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_roundtrip() {
        let m = DatasetManifest::new(
            "/data",
            vec![
                DatasetEntry {
                    audio_path: "clips/0000.wav".into(),
                    caption: "a dog barking twice".into(),
                    tag: "bark".into(),
                },
                DatasetEntry {
                    audio_path: "clips/0001.wav".into(),
                    caption: "light rain falling on a roof".into(),
                    tag: "rain".into(),
                },
            ],
        )
        .unwrap();
        assert_eq!(DatasetManifest::parse_tsv("/data", &m.to_tsv()).unwrap(), m);
    }

    #[test]
    fn duplicate_paths_and_empty_captions_are_rejected() {
        let e = |p: &str, c: &str| DatasetEntry {
            audio_path: p.into(),
            caption: c.into(),
            tag: "t".into(),
        };
        assert!(DatasetManifest::new(".", vec![e("a.wav", "x"), e("a.wav", "y")]).is_err());
        assert!(DatasetManifest::new(".", vec![e("a.wav", "  ")]).is_err());
        assert!(DatasetManifest::parse_tsv(".", "a.wav\tonly two\n").is_err());
    }

    #[test]
    fn zero_clips_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_dataset(0, 1, dir.path()).is_err());
    }

    #[test]
    fn captions_follow_the_parameters() {
        let rising = SynthParams::Siren { f_start: 200.0, f_end: 800.0 };
        assert_eq!(caption_for(&rising), "a siren with a rising pitch");
        let falling = SynthParams::Siren { f_start: 800.0, f_end: 200.0 };
        assert_eq!(caption_for(&falling), "a siren with a falling pitch");
    }
}
