//! WAV export/import: RIFF, mono, 32-bit float little-endian, 44100 Hz.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use sptmod_core::dataset::{AudioBuffer, SAMPLE_RATE};

pub fn write_wav(path: &Path, buffer: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    for &v in &buffer.samples {
        writer.write_sample(v as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a mono WAV. 32-bit float is the native format; 16-bit integer is
/// accepted and rescaled.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        bail!("{}: expected mono, got {} channels", path.display(), spec.channels);
    }
    if spec.sample_rate != SAMPLE_RATE {
        bail!(
            "{}: expected {} Hz, got {}",
            path.display(),
            SAMPLE_RATE,
            spec.sample_rate
        );
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(|v| v as f64)).collect::<Result<_, _>>()?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (format, bits) => bail!("{}: unsupported format {:?}/{}", path.display(), format, bits),
    };
    Ok(AudioBuffer::from_samples(samples))
}
