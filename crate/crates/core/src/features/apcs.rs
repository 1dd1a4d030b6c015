//! APCS control-signal files.
//!
//! ```text
//! "APCS" | version u32 = 1 | frame_count u32 | track_layout u32 = 16 | frame_rate f32
//! frame_count rows of 16 f32: loudness, pitch, centroid, mfcc[0..13]
//! ```
//! All little-endian.

use std::fs;
use std::path::Path;

use super::{ControlSignals, CONTROL_CHANNELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"APCS";
const VERSION: u32 = 1;
pub const APCS_TRACKS: u32 = CONTROL_CHANNELS as u32;
const HEADER_LEN: usize = 20;

pub fn write_apcs(ctrls: &ControlSignals, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(ctrls)?).map_err(|e| Error::io(path, e))
}

pub fn read_apcs(path: impl AsRef<Path>) -> Result<ControlSignals> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub(crate) fn to_bytes(ctrls: &ControlSignals) -> Result<Vec<u8>> {
    ctrls.validate()?;
    let rows = ctrls.rows();
    let mut out = Vec::with_capacity(HEADER_LEN + rows.len() * CONTROL_CHANNELS * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&APCS_TRACKS.to_le_bytes());
    out.extend_from_slice(&(ctrls.frame_rate as f32).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<ControlSignals> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format("APCS", "missing APCS magic"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::format("APCS", format!("unsupported version {version}")));
    }
    let frames = word(8) as usize;
    let layout = word(12);
    if layout != APCS_TRACKS {
        return Err(Error::format("APCS", format!("track layout {layout}, expected {APCS_TRACKS}")));
    }
    let frame_rate = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * CONTROL_CHANNELS * 4 {
        return Err(Error::format(
            "APCS",
            format!("{} payload bytes for {frames} frames", body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let rows: Vec<[f64; CONTROL_CHANNELS]> = values
        .chunks_exact(CONTROL_CHANNELS)
        .map(|r| r.try_into().unwrap())
        .collect();
    let ctrls = ControlSignals::from_rows(&rows, frame_rate);
    ctrls.validate()?;
    Ok(ctrls)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ControlSignals {
        let rows: Vec<[f64; CONTROL_CHANNELS]> = (0..5)
            .map(|f| std::array::from_fn(|c| (f * 31 + c) as f64 * 0.37 - 3.0))
            .collect();
        ControlSignals::from_rows(&rows, 62.5)
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&sample()).unwrap();
        assert_eq!(&b[..4], b"APCS");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 16);
        assert_eq!(f32::from_le_bytes(b[16..20].try_into().unwrap()), 62.5);
        assert_eq!(b.len(), 20 + 5 * 16 * 4);
    }

    #[test]
    fn roundtrip_equals_f32_rounded_signals() {
        let c = sample();
        assert_eq!(from_bytes(&to_bytes(&c).unwrap()).unwrap(), c.quantized_f32());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let b = to_bytes(&sample()).unwrap();
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[12] = 15;
        assert!(from_bytes(&bad).is_err());
        let mut bad = b;
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
    }
}
