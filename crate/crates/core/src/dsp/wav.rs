use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = i16::MAX as f64;

/// Reads a 16-bit PCM RIFF/WAVE file, averaging stereo down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{}: only 16-bit PCM is supported, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels != 1 && channels != 2 {
        return Err(Error::Unsupported(format!(
            "{}: {} channels (expected 1 or 2)",
            path.display(),
            channels
        )));
    }
    let raw = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    let samples: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64).sum();
            (sum / channels as f64 / FULL_SCALE).clamp(-1.0, 1.0)
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{}: no audio frames",
            path.display()
        )));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM file. Samples outside `[-1, 1]` are clipped.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let clipped = w.samples().iter().filter(|s| s.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!(
            "{}: clipping {clipped} samples outside [-1, 1]",
            path.display()
        );
    }
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        // hound reports a truncated header or payload as a short read
        hound::Error::IoError(io)
            if io.kind() == std::io::ErrorKind::UnexpectedEof
                || io.to_string().contains("enough bytes") =>
        {
            Error::Format(format!("{}: truncated WAVE data", path.display()))
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => {
            Error::Unsupported(format!("{}: unsupported WAVE encoding", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}
