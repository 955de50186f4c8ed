//! Front-ends: per-stem frame features and their fusion into one sequence.

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::dsp::{lfcc, sinc_filterbank_features, FeatureSequence, LfccConfig, Waveform};
use crate::error::{Error, Result};

/// Hop of the sinc filterbank front-end, in seconds.
pub const SPECTROGRAM_HOP_S: f64 = 0.01;

/// How raw stems become frame features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    /// Precomputed SSL embedding files.
    EmbeddingFiles,
    /// 60-dimensional LFCCs of each stem.
    RawLfcc,
    /// Log energies of a fixed sinc band-pass bank.
    RawSpectrogram,
}

impl Frontend {
    pub fn is_waveform(self) -> bool {
        !matches!(self, Frontend::EmbeddingFiles)
    }
}

/// Which stems the detector sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InputSetup {
    /// The mixture only, fed to both paths.
    M,
    /// The vocal only; the instrumental path receives zeros.
    V,
    /// Separate instrumental and vocal stems.
    #[default]
    IV,
}

impl std::fmt::Display for InputSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputSetup::M => "M",
            InputSetup::V => "V",
            InputSetup::IV => "IV",
        })
    }
}

impl std::str::FromStr for InputSetup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(InputSetup::M),
            "V" => Ok(InputSetup::V),
            "IV" => Ok(InputSetup::IV),
            other => Err(Error::Config(format!(
                "unknown input setup {other:?} (expected M, V or IV)"
            ))),
        }
    }
}

/// One stem as handed to the model: audio or a precomputed embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum Stem {
    Audio(Waveform),
    Embedding(FeatureSequence),
}

/// The stems available for one segment. Which are required depends on the
/// input setup.
#[derive(Debug, Clone, Copy, Default)]
pub struct StemInputs<'a> {
    pub instrumental: Option<&'a Stem>,
    pub vocal: Option<&'a Stem>,
    pub mixture: Option<&'a Stem>,
}

/// Frame features of a single stem under the configured front-end.
pub fn stem_features(cfg: &ModelConfig, stem: &Stem) -> Result<FeatureSequence> {
    match (cfg.frontend, stem) {
        (Frontend::RawLfcc, Stem::Audio(w)) => lfcc(w, &LfccConfig::default()),
        (Frontend::RawSpectrogram, Stem::Audio(w)) => {
            sinc_filterbank_features(w, cfg.sinc_filters, SPECTROGRAM_HOP_S)
        }
        (Frontend::EmbeddingFiles, Stem::Embedding(f)) => Ok(f.clone()),
        (Frontend::EmbeddingFiles, Stem::Audio(_)) => Err(Error::Input(
            "the embedding front-end needs embedding files, got audio".into(),
        )),
        (_, Stem::Embedding(_)) => Err(Error::Input(
            "waveform front-ends need audio, got an embedding".into(),
        )),
    }
}

/// Value of `seq` at fractional frame position `pos`, linearly interpolated
/// and held constant past either end.
fn interp_row(seq: &FeatureSequence, pos: f64, out: &mut Vec<f64>) {
    let last = seq.frames() - 1;
    if pos <= 0.0 {
        out.extend_from_slice(seq.row(0));
    } else if pos >= last as f64 {
        out.extend_from_slice(seq.row(last));
    } else {
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        let (a, b) = (seq.row(i), seq.row(i + 1));
        out.extend(a.iter().zip(b).map(|(x, y)| x + w * (y - x)));
    }
}

/// Brings both sequences to the higher of the two frame rates by linear
/// interpolation (frame `i` sits at `i / rate` seconds) and concatenates
/// them feature-wise, instrumental columns first. The output spans the
/// longer of the two sequences.
pub fn fuse_branches(ins: &FeatureSequence, voc: &FeatureSequence) -> Result<FeatureSequence> {
    let rate = ins.frame_rate().max(voc.frame_rate());
    let frames = [ins, voc]
        .iter()
        .map(|s| (s.duration_s() * rate).round() as usize)
        .max()
        .unwrap_or(1)
        .max(1);
    let dim = ins.dim() + voc.dim();
    let mut data = Vec::with_capacity(frames * dim);
    for k in 0..frames {
        // a ratio of exactly 1 keeps the faster sequence's frames untouched
        interp_row(ins, k as f64 * (ins.frame_rate() / rate), &mut data);
        interp_row(voc, k as f64 * (voc.frame_rate() / rate), &mut data);
    }
    FeatureSequence::new(data, frames, dim, rate, voc.source())
}

/// Builds the fused feature sequence the encoder consumes.
///
/// - `IV`: instrumental and vocal features, fused.
/// - `V`: the vocal features fused with an all-zero instrumental block.
/// - `M`: the mixture features fed to both paths.
pub fn model_input(
    cfg: &ModelConfig,
    setup: InputSetup,
    inputs: &StemInputs<'_>,
) -> Result<FeatureSequence> {
    fn need<'a>(stem: Option<&'a Stem>, setup: InputSetup, what: &str) -> Result<&'a Stem> {
        stem.ok_or_else(|| Error::Input(format!("input setup {setup} needs the {what} stem")))
    }
    let fused = match setup {
        InputSetup::IV => {
            let ins = stem_features(cfg, need(inputs.instrumental, setup, "instrumental")?)?;
            let voc = stem_features(cfg, need(inputs.vocal, setup, "vocal")?)?;
            fuse_branches(&ins, &voc)?
        }
        InputSetup::V => {
            let voc = stem_features(cfg, need(inputs.vocal, setup, "vocal")?)?;
            let ins_dim = match cfg.frontend {
                Frontend::EmbeddingFiles => cfg.embedding_dims[0],
                _ => voc.dim(),
            };
            let zeros =
                FeatureSequence::zeros(voc.frames(), ins_dim, voc.frame_rate(), voc.source())?;
            fuse_branches(&zeros, &voc)?
        }
        InputSetup::M => {
            let mix = stem_features(cfg, need(inputs.mixture, setup, "mixture")?)?;
            fuse_branches(&mix, &mix)?
        }
    };
    if fused.dim() != cfg.input_dim() {
        return Err(Error::Input(format!(
            "fused features have {} dims but the model expects {}",
            fused.dim(),
            cfg.input_dim()
        )));
    }
    Ok(fused)
}
