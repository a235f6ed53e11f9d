use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Raw audio container: 4-byte magic, little-endian u32 sample rate, then
/// little-endian f32 mono samples.
pub const AUDIO_MAGIC: [u8; 4] = *b"S2AU";

pub fn write_audio(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + samples.len() * 4);
    buf.extend_from_slice(&AUDIO_MAGIC);
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    for s in samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_audio(path: &Path) -> Result<(Vec<f32>, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || bytes[..4] != AUDIO_MAGIC {
        return Err(Error::input(format!("{} is not an audio file (bad header)", path.display())));
    }
    if (bytes.len() - 8) % 4 != 0 {
        return Err(Error::input(format!("{} has a truncated sample", path.display())));
    }
    let sample_rate = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let samples = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((samples, sample_rate))
}
