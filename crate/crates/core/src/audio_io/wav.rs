//! Minimal RIFF/WAVE codec for mono PCM16 and IEEE float32 files.

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl std::str::FromStr for WavEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavEncoding::Pcm16),
            "float32" => Ok(WavEncoding::Float32),
            other => Err(Error::InvalidArgument(format!("unknown WAV encoding `{other}`"))),
        }
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip, encoding)).map_err(|e| Error::io(path, e))
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub(crate) fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format("WAV", "missing RIFF/WAVE header"));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("WAV", "chunk runs past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::format("WAV", "fmt chunk shorter than 16 bytes"));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE && body.len() >= 26 {
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (tag, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::format("WAV", "no fmt chunk"))?;
    let data = data.ok_or_else(|| Error::format("WAV", "no data chunk"))?;
    if channels != 1 {
        return Err(Error::UnsupportedWav {
            field: "channel count",
            value: channels.to_string(),
        });
    }
    let samples: Vec<f32> = match (tag, bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (FORMAT_PCM | FORMAT_FLOAT, b) => {
            return Err(Error::UnsupportedWav {
                field: "bits per sample",
                value: b.to_string(),
            })
        }
        (t, _) => {
            return Err(Error::UnsupportedWav {
                field: "format tag",
                value: format!("{t:#06x}"),
            })
        }
    };
    AudioClip::new(samples, sample_rate)
}

pub(crate) fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let (tag, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block_align = bits / 8;
    let data_len = clip.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in clip.samples() {
                let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        WavEncoding::Float32 => {
            for &s in clip.samples() {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_full_scale_normalizes_to_32767_over_32768() {
        let mut bytes = encode_wav(&AudioClip::silence(1, 16_000), WavEncoding::Pcm16);
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&32767i16.to_le_bytes());
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples()[0], 32767.0 / 32768.0);
    }

    #[test]
    fn one_second_of_silence_has_16000_frame_data_chunk() {
        let bytes = encode_wav(&AudioClip::silence(16_000, 16_000), WavEncoding::Pcm16);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 16_000 * 2);
        let bytes = encode_wav(&AudioClip::silence(16_000, 16_000), WavEncoding::Float32);
        assert_eq!(u32_at(&bytes, 40), 16_000 * 4);
    }

    #[test]
    fn stereo_is_rejected_with_channel_count() {
        let mut bytes = encode_wav(&AudioClip::silence(4, 16_000), WavEncoding::Pcm16);
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        match decode_wav(&bytes) {
            Err(Error::UnsupportedWav { field, value }) => {
                assert_eq!(field, "channel count");
                assert_eq!(value, "2");
            }
            other => panic!("expected channel-count error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_bit_depth_names_the_field() {
        let mut bytes = encode_wav(&AudioClip::silence(4, 16_000), WavEncoding::Pcm16);
        bytes[34..36].copy_from_slice(&24u16.to_le_bytes());
        let err = decode_wav(&bytes).unwrap_err();
        assert!(err.to_string().contains("bits per sample"), "{err}");
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let clip = AudioClip::new(vec![0.25, -0.5, 0.125], 8_000).unwrap();
        let plain = encode_wav(&clip, WavEncoding::Float32);
        let mut bytes = plain[..12].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[12..]);
        assert_eq!(decode_wav(&bytes).unwrap(), clip);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            read_wav("/nonexistent/definitely/missing.wav"),
            Err(Error::Io { .. })
        ));
    }
}
