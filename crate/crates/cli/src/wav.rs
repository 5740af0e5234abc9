//! Multichannel WAV I/O. Reads 16-bit PCM and 32-bit float files; writes
//! either. Samples are `signal[channel][t]` in `[-1, 1]` for PCM.
//!
//! 16-bit output is quantized by rounding `x · 32768` and saturating to the
//! `i16` range, so a round trip is within `1/32768` for samples in `[-1, 1]`.
//! Float output is exact for values representable in `f32`.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::config::WavFormat;

pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = WavReader::open(path).with_context(|| format!("cannot open WAV {}", path.display()))?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    ensure!(n >= 1, "{} has no channels", path.display());
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("corrupt sample data in {}", path.display()))?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("corrupt sample data in {}", path.display()))?,
        (format, bits) => bail!(
            "{}: unsupported WAV encoding ({bits}-bit {format:?}); use 16-bit PCM or 32-bit float",
            path.display()
        ),
    };
    ensure!(interleaved.len() % n == 0, "{}: truncated final frame", path.display());
    let len = interleaved.len() / n;
    let channels = (0..n).map(|i| (0..len).map(|t| interleaved[t * n + i]).collect()).collect();
    Ok(Audio { sample_rate: spec.sample_rate, channels })
}

pub fn write_wav(path: &Path, audio: &Audio, format: WavFormat) -> Result<()> {
    let n = audio.channels.len();
    ensure!(n >= 1 && n <= u16::MAX as usize, "cannot write {n} channels");
    let len = audio.channels[0].len();
    ensure!(audio.channels.iter().all(|c| c.len() == len), "channels differ in length");
    let spec = match format {
        WavFormat::Float32 => WavSpec {
            channels: n as u16,
            sample_rate: audio.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
        WavFormat::Pcm16 => WavSpec {
            channels: n as u16,
            sample_rate: audio.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut writer = WavWriter::create(path, spec).with_context(|| format!("cannot write {}", path.display()))?;
    let mut clipped = 0usize;
    for t in 0..len {
        for ch in &audio.channels {
            match format {
                WavFormat::Float32 => writer.write_sample(ch[t] as f32)?,
                WavFormat::Pcm16 => {
                    let q = (ch[t] * 32768.0).round();
                    if !(-32768.0..=32767.0).contains(&q) {
                        clipped += 1;
                    }
                    writer.write_sample(q.clamp(-32768.0, 32767.0) as i16)?
                }
            }
        }
    }
    writer.finalize().with_context(|| format!("cannot finalize {}", path.display()))?;
    if clipped > 0 {
        log::warn!("{}: {clipped} samples clipped to [-1, 1]", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsupported_encoding_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let spec = WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 8, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path).err().unwrap();
        assert!(format!("{err:#}").contains("unsupported"));
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF0000WAVEjunk").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
