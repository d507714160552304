//! Mono WAV input/output (16-bit PCM or 32-bit float).

use std::path::Path;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::spectral::Waveform;

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Read a mono WAV file. If `expected_rate` is given, a differing file rate
/// is an error (resampling is out of scope).
pub fn read_wav<T: Scalar>(path: &Path, expected_rate: Option<u32>) -> Result<Waveform<T>> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(Error::Wav(format!(
                "{}: sample rate {} does not match expected {rate}",
                path.display(),
                spec.sample_rate
            )));
        }
    }
    let samples: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| T::cast(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| T::cast(v as f64)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported format {fmt:?}/{bits} bits (want 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono WAV file.
pub fn write_wav<T: Scalar>(path: &Path, wave: &Waveform<T>, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    match encoding {
        WavEncoding::Pcm16 => {
            for s in wave.samples() {
                let v = s.to_f64().unwrap_or(0.0).clamp(-1.0, 1.0);
                let q = (v * 32767.0).round() as i16;
                writer
                    .write_sample(q)
                    .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
            }
        }
        WavEncoding::Float32 => {
            for s in wave.samples() {
                writer
                    .write_sample(s.to_f64().unwrap_or(0.0) as f32)
                    .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
            }
        }
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}
