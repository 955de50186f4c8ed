//! Waveforms, feature sequences and the classical front-end features.

mod resample;
mod spectral;
mod wav;

pub use resample::resample;
pub use spectral::{
    lfcc, lfcc_frame_count, sinc_filterbank, sinc_filterbank_features, stft_frame_count,
    stft_power, LfccConfig, Spectrogram,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Sample rate every stem is brought to on load.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Length(
                "waveform must hold at least one sample".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false for a constructed waveform; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }
}

/// Where a feature sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Lfcc,
    Spectrogram,
    Embedding,
}

/// A T×D matrix of frame-level features stamped with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    frames: usize,
    dim: usize,
    frame_rate: f64,
    source: SourceTag,
}

impl FeatureSequence {
    pub fn new(
        data: Vec<f64>,
        frames: usize,
        dim: usize,
        frame_rate: f64,
        source: SourceTag,
    ) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Length(format!(
                "feature sequence must be non-empty, got {frames}x{dim}"
            )));
        }
        if data.len() != frames * dim {
            return Err(Error::Length(format!(
                "expected {} values for {frames}x{dim}, got {}",
                frames * dim,
                data.len()
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Config(format!("invalid frame rate {frame_rate}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite feature value at index {i}"
            )));
        }
        Ok(Self {
            data,
            frames,
            dim,
            frame_rate,
            source,
        })
    }

    pub fn zeros(frames: usize, dim: usize, frame_rate: f64, source: SourceTag) -> Result<Self> {
        Self::new(vec![0.0; frames * dim], frames, dim, frame_rate, source)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.dim + d]
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.frame_rate
    }

    /// Frames `[start, start + len)`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start >= self.frames {
            return Err(Error::EmptyRange(format!(
                "start frame {start} is beyond the {} available frames",
                self.frames
            )));
        }
        let mut data = vec![0.0; len * self.dim];
        let avail = (self.frames - start).min(len);
        data[..avail * self.dim]
            .copy_from_slice(&self.data[start * self.dim..(start + avail) * self.dim]);
        Self::new(data, len, self.dim, self.frame_rate, self.source)
    }
}

/// Slice `dur_s` seconds starting at `start_s`, zero-padding the tail when the
/// request runs past the end of the waveform.
pub fn segment_clip(w: &Waveform, start_s: f64, dur_s: f64) -> Result<Waveform> {
    if !(start_s >= 0.0 && dur_s > 0.0) {
        return Err(Error::Config(format!(
            "invalid segment request start={start_s} dur={dur_s}"
        )));
    }
    let sr = w.sample_rate as f64;
    let start = (start_s * sr).round() as usize;
    let len = ((dur_s * sr).round() as usize).max(1);
    if start >= w.len() {
        return Err(Error::EmptyRange(format!(
            "segment start {start_s}s is beyond the {:.3}s waveform",
            w.duration_s()
        )));
    }
    let mut out = vec![0.0; len];
    let avail = (w.len() - start).min(len);
    out[..avail].copy_from_slice(&w.samples[start..start + avail]);
    Waveform::new(out, w.sample_rate)
}

/// Signal-to-noise ratio in dB, `+inf` when the noise carries no energy.
pub fn measure_snr(signal: &Waveform, noise: &Waveform) -> Result<f64> {
    if signal.len() != noise.len() {
        return Err(Error::Length(format!(
            "signal has {} samples but noise has {}",
            signal.len(),
            noise.len()
        )));
    }
    let noise_power = noise.power();
    if noise_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal.power() / noise_power).log10())
}
