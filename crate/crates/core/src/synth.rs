//! Synthetic singing corpus for smoke tests and the overfit check.
//!
//! Every clip pairs a beat-synchronous harmonic instrumental with a sung
//! line of formant-shaped harmonic syllables. Bona fide clips keep the
//! vocal as synthesized; spoof clips carry the same kind of vocal with every
//! Fourier phase randomized, which keeps its long-term spectrum but smears
//! the syllable envelope and the harmonic phase coherence across the clip.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::{write_wav, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{save_manifest, ClipRecord, Label, Manifest, Split};
use crate::seed;

/// Beats per bar of the synthetic instrumentals.
pub const BEATS_PER_BAR: usize = 4;

/// Vowel formants `(F1, F2, F3)` in Hz.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Clips per split; labels alternate within each split.
    pub splits: Vec<(Split, usize)>,
    /// Tempi are drawn uniformly from this range.
    pub bpm_range: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 4.0,
            sample_rate: 16_000,
            splits: vec![(Split::Train, 16), (Split::Val, 8)],
            bpm_range: [90.0, 140.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) || self.sample_rate == 0 {
            return Err(Error::Config(
                "duration_s and sample_rate must be positive".into(),
            ));
        }
        let [lo, hi] = self.bpm_range;
        if !(lo > 30.0 && hi < 300.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "bpm_range [{lo}, {hi}] must lie in (30, 300)"
            )));
        }
        Ok(())
    }
}

/// A beat-synchronous instrumental and its downbeat times.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrumental {
    pub waveform: Waveform,
    pub bpm: f64,
    pub downbeats_s: Vec<f64>,
}

fn normalize(mut x: Vec<f64>, peak: f64) -> Vec<f64> {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
    x
}

/// Plucked three-harmonic chords on every beat, accented on downbeats, with
/// the root changing every bar.
pub fn harmonic_instrumental<R: Rng + ?Sized>(
    bpm: f64,
    duration_s: f64,
    sample_rate: u32,
    rng: &mut R,
) -> Result<Instrumental> {
    let sr = sample_rate as f64;
    let n = ((duration_s * sr).round() as usize).max(1);
    let beat = 60.0 / bpm;
    let bar = beat * BEATS_PER_BAR as f64;
    let first = rng.random_range(0.0..bar);
    let mut x = vec![0.0; n];
    let mut downbeats_s = Vec::new();
    let mut k = 0usize;
    let mut root = 0.0;
    loop {
        let onset = first + k as f64 * beat - bar;
        if onset >= duration_s {
            break;
        }
        if k.is_multiple_of(BEATS_PER_BAR) {
            root = rng.random_range(80.0..160.0);
            if onset >= 0.0 {
                downbeats_s.push(onset);
            }
        }
        let accent = if k.is_multiple_of(BEATS_PER_BAR) {
            1.0
        } else {
            0.6
        };
        let start = (onset.max(0.0) * sr) as usize;
        let stop = (((onset + beat) * sr) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(stop).skip(start) {
            let t = i as f64 / sr - onset;
            let env = accent * (-t / 0.25).exp();
            *v += env
                * [1.0, 1.5, 2.0]
                    .iter()
                    .enumerate()
                    .map(|(h, ratio)| (2.0 * PI * root * ratio * t).sin() / (h + 1) as f64)
                    .sum::<f64>();
        }
        k += 1;
    }
    Ok(Instrumental {
        waveform: Waveform::new(normalize(x, 0.5), sample_rate)?,
        bpm,
        downbeats_s,
    })
}

/// A sung line: syllables of random pitch and vowel, each a harmonic series
/// weighted by the vowel's formant resonances under a raised-cosine
/// envelope, separated by short rests.
pub fn formant_vocal<R: Rng + ?Sized>(
    duration_s: f64,
    sample_rate: u32,
    rng: &mut R,
) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let n = ((duration_s * sr).round() as usize).max(1);
    let mut x = vec![0.0; n];
    let mut t0 = rng.random_range(0.0..0.1);
    while t0 < duration_s {
        let len = rng.random_range(0.18..0.35);
        let f0: f64 = rng.random_range(160.0..320.0);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let harmonics: Vec<(f64, f64)> = (1..)
            .map(|h| h as f64 * f0)
            .take_while(|f| *f < 0.45 * sr)
            .map(|f| {
                let gain: f64 = vowel
                    .iter()
                    .map(|fc| (-((f - fc) / 120.0).powi(2)).exp())
                    .sum::<f64>()
                    + 0.05;
                (f, gain * f0 / f)
            })
            .collect();
        let start = (t0 * sr) as usize;
        let stop = (((t0 + len) * sr) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(stop).skip(start) {
            let t = i as f64 / sr - t0;
            let env = 0.5 - 0.5 * (2.0 * PI * t / len).cos();
            *v += env
                * harmonics
                    .iter()
                    .map(|(f, a)| a * (2.0 * PI * f * t).sin())
                    .sum::<f64>();
        }
        t0 += len + rng.random_range(0.05..0.12);
    }
    Waveform::new(normalize(x, 0.5), sample_rate)
}

/// Keeps every Fourier magnitude of `w` and draws every phase uniformly
/// (conjugate-symmetric, so the result is real).
pub fn phase_randomize<R: Rng + ?Sized>(w: &Waveform, rng: &mut R) -> Result<Waveform> {
    let n = w.len();
    let mut buf: Vec<Complex<f64>> = w.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for k in 1..n.div_ceil(2) {
        let phase = rng.random_range(0.0..2.0 * PI);
        let mag = buf[k].norm();
        buf[k] = Complex::from_polar(mag, phase);
        buf[n - k] = buf[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    Waveform::new(out, w.sample_rate())
}

/// Writes a synthetic corpus under `root` (stems in `root/audio`, the
/// manifest in `root/manifest.jsonl`) and returns the manifest.
pub fn synth_corpus(cfg: &SynthConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let audio = root.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut records = Vec::new();
    for &(split, count) in &cfg.splits {
        for i in 0..count {
            let clip_id = format!("{split}-{i:04}");
            let label = if i % 2 == 0 {
                Label::Bonafide
            } else {
                Label::Spoof
            };
            let mut rng = seed::rng(seed::derive(cfg.seed, &[clip_id.as_bytes()]));
            let bpm = rng.random_range(cfg.bpm_range[0]..=cfg.bpm_range[1]);
            let ins = harmonic_instrumental(bpm, cfg.duration_s, cfg.sample_rate, &mut rng)?;
            let mut voc = formant_vocal(cfg.duration_s, cfg.sample_rate, &mut rng)?;
            if label == Label::Spoof {
                voc = phase_randomize(&voc, &mut rng)?;
            }
            let vocal_path = format!("audio/{clip_id}.voc.wav");
            let instrumental_path = format!("audio/{clip_id}.ins.wav");
            write_wav(&voc, root.join(&vocal_path))?;
            write_wav(&ins.waveform, root.join(&instrumental_path))?;
            records.push(ClipRecord {
                clip_id,
                label,
                singer_id: format!("{split}-singer{}", i / 2 % 4),
                split,
                vocal_path,
                instrumental_path,
                embedding_voc_path: None,
                embedding_ins_path: None,
                tempo_bpm: Some(bpm),
                downbeats_s: ins.downbeats_s,
            });
        }
    }
    let m = Manifest::new(records, root)?;
    save_manifest(&m, root.join("manifest.jsonl"))?;
    Ok(m)
}
