use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{FeatureSequence, SourceTag, Waveform};
use crate::error::{Error, Result};

/// Power spectrogram, `frames x bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    frames: usize,
    bins: usize,
    hop_seconds: f64,
    n_fft: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

fn hop_samples(hop_s: f64, sample_rate: u32) -> Result<usize> {
    let hop = (hop_s * sample_rate as f64).round();
    if hop.is_nan() || hop < 1.0 {
        return Err(Error::Config(format!(
            "hop of {hop_s}s is below one sample"
        )));
    }
    Ok(hop as usize)
}

/// `floor((len - n_fft) / hop) + 1`, or zero if the input is shorter than one frame.
pub fn stft_frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        0
    } else {
        (len - n_fft) / hop + 1
    }
}

/// Same closed form as [`stft_frame_count`], for the LFCC frame geometry.
pub fn lfcc_frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    stft_frame_count(len, frame_len, hop)
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Windows each frame (length `win.len()`, zero-padded to `n_fft`) and returns
/// its one-sided power spectrum.
fn framed_power(x: &[f64], win: &[f64], n_fft: usize, hop: usize) -> (Vec<f64>, usize, usize) {
    let frames = stft_frame_count(x.len(), win.len(), hop);
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win.len() {
                Complex::new(x[start + i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    (out, frames, bins)
}

/// Hann-windowed power spectrogram without centering: frames start at
/// multiples of the hop and every frame lies fully inside the signal.
pub fn stft_power(w: &Waveform, n_fft: usize, hop_s: f64) -> Result<Spectrogram> {
    if n_fft < 2 {
        return Err(Error::Config(format!(
            "n_fft must be at least 2, got {n_fft}"
        )));
    }
    if w.len() < n_fft {
        return Err(Error::Length(format!(
            "need at least {n_fft} samples for one frame, got {}",
            w.len()
        )));
    }
    let hop = hop_samples(hop_s, w.sample_rate())?;
    let (data, frames, bins) = framed_power(w.samples(), &periodic_hann(n_fft), n_fft, hop);
    Ok(Spectrogram {
        data,
        frames,
        bins,
        hop_seconds: hop as f64 / w.sample_rate() as f64,
        n_fft,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfccConfig {
    pub frame_s: f64,
    pub hop_s: f64,
    pub n_coeff: usize,
    pub n_filters: usize,
    pub log_floor: f64,
}

impl Default for LfccConfig {
    fn default() -> Self {
        Self {
            frame_s: 0.020,
            hop_s: 0.010,
            n_coeff: 60,
            n_filters: 20,
            log_floor: 1e-10,
        }
    }
}

/// Linear-frequency cepstral coefficients.
///
/// A triangular filterbank with linearly spaced edges over `[0, sr/2]`, log
/// band energies and an orthonormal DCT-II give `min(n_coeff, n_filters)`
/// static coefficients. A DCT of `n_filters` energies cannot yield more than
/// `n_filters` independent terms, so when `n_coeff` is larger the remaining
/// columns are filled with first- then second-order deltas (`n_coeff` up to
/// `3 * n_filters`; 60 with the default 20 filters).
pub fn lfcc(w: &Waveform, cfg: &LfccConfig) -> Result<FeatureSequence> {
    let LfccConfig {
        frame_s,
        hop_s,
        n_coeff,
        n_filters,
        log_floor,
    } = *cfg;
    if n_filters == 0 || n_coeff == 0 || n_coeff > 3 * n_filters {
        return Err(Error::Config(format!(
            "n_coeff {n_coeff} must be in 1..={} for {n_filters} filters",
            3 * n_filters
        )));
    }
    let sr = w.sample_rate();
    let frame_len = (frame_s * sr as f64).round() as usize;
    if frame_len < 2 {
        return Err(Error::Config(format!("frame of {frame_s}s is too short")));
    }
    if w.len() < frame_len {
        return Err(Error::Length(format!(
            "need at least {frame_len} samples for one frame, got {}",
            w.len()
        )));
    }
    let hop = hop_samples(hop_s, sr)?;
    let n_fft = frame_len.next_power_of_two();
    let (power, frames, bins) = framed_power(w.samples(), &periodic_hann(frame_len), n_fft, hop);

    let fbank = linear_filterbank(n_filters, n_fft, sr);
    let n_static = n_coeff.min(n_filters);
    let dct = dct2_orthonormal(n_filters, n_static);

    let mut statics = vec![0.0; frames * n_static];
    let mut log_e = vec![0.0; n_filters];
    for t in 0..frames {
        let p = &power[t * bins..(t + 1) * bins];
        for (m, filt) in fbank.iter().enumerate() {
            let e: f64 = filt.iter().zip(p).map(|(a, b)| a * b).sum();
            log_e[m] = (e + log_floor).ln();
        }
        for (k, basis) in dct.iter().enumerate() {
            statics[t * n_static + k] = basis.iter().zip(&log_e).map(|(a, b)| a * b).sum();
        }
    }

    let mut blocks = vec![statics];
    while blocks.len() * n_static < n_coeff {
        let prev = blocks.last().expect("at least the static block");
        blocks.push(deltas(prev, frames, n_static));
    }
    let mut data = Vec::with_capacity(frames * n_coeff);
    for t in 0..frames {
        let row = blocks
            .iter()
            .flat_map(|b| b[t * n_static..(t + 1) * n_static].iter().copied());
        data.extend(row.take(n_coeff));
    }
    FeatureSequence::new(
        data,
        frames,
        n_coeff,
        sr as f64 / hop as f64,
        SourceTag::Lfcc,
    )
}

/// Central difference over frames with edge replication.
fn deltas(x: &[f64], frames: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for t in 0..frames {
        let prev = t.saturating_sub(1);
        let next = (t + 1).min(frames - 1);
        for d in 0..dim {
            out[t * dim + d] = 0.5 * (x[next * dim + d] - x[prev * dim + d]);
        }
    }
    out
}

fn linear_filterbank(n_filters: usize, n_fft: usize, sr: u32) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let nyquist = sr as f64 / 2.0;
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| nyquist * i as f64 / (n_filters + 1) as f64)
        .collect();
    (0..n_filters)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sr as f64 / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn dct2_orthonormal(n: usize, n_out: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| scale * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos())
                .collect()
        })
        .collect()
}

/// Band-pass sinc kernels with linearly spaced, contiguous pass bands over
/// `[0, sr/2]` (frequencies normalized to the sample rate), Hamming-windowed (the RawNet2 front-end initialization).
pub fn sinc_filterbank(n_filters: usize, kernel_len: usize) -> Vec<Vec<f64>> {
    let half = (kernel_len / 2) as f64;
    let band = 0.5 / n_filters as f64;
    (0..n_filters)
        .map(|m| {
            let f1 = m as f64 * band;
            let f2 = (m + 1) as f64 * band;
            (0..kernel_len)
                .map(|i| {
                    let n = i as f64 - half;
                    let lp = |fc: f64| {
                        if n == 0.0 {
                            2.0 * fc
                        } else {
                            (2.0 * PI * fc * n).sin() / (PI * n)
                        }
                    };
                    let hamming =
                        0.54 - 0.46 * (2.0 * PI * i as f64 / (kernel_len - 1) as f64).cos();
                    (lp(f2) - lp(f1)) * hamming
                })
                .collect()
        })
        .collect()
}

/// Framewise log energies at the output of a fixed sinc band-pass bank.
///
/// The filtering is done in the frequency domain: each 512-point power
/// spectrum frame is weighted by the bank's squared magnitude responses.
pub fn sinc_filterbank_features(
    w: &Waveform,
    n_filters: usize,
    hop_s: f64,
) -> Result<FeatureSequence> {
    const N_FFT: usize = 512;
    const KERNEL: usize = 129;
    if n_filters == 0 {
        return Err(Error::Config("sinc bank needs at least one filter".into()));
    }
    let spec = stft_power(w, N_FFT, hop_s)?;
    let bins = spec.bins();
    let fft = FftPlanner::new().plan_fft_forward(N_FFT);
    let responses: Vec<Vec<f64>> = sinc_filterbank(n_filters, KERNEL)
        .into_iter()
        .map(|h| {
            let mut buf: Vec<Complex<f64>> = (0..N_FFT)
                .map(|i| Complex::new(if i < h.len() { h[i] } else { 0.0 }, 0.0))
                .collect();
            fft.process(&mut buf);
            buf[..bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(spec.frames() * n_filters);
    for t in 0..spec.frames() {
        let p = spec.frame(t);
        for r in &responses {
            let e: f64 = r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / N_FFT as f64;
            data.push((e + 1e-10).ln());
        }
    }
    FeatureSequence::new(
        data,
        spec.frames(),
        n_filters,
        1.0 / spec.hop_seconds(),
        SourceTag::Spectrogram,
    )
}
