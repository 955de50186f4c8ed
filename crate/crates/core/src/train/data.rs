//! Clip loading and fixed-duration segment features.

use crate::augment::{augment_segment, mix_stems, AugmentPlan};
use crate::dsp::{
    read_wav, resample, segment_clip, FeatureSequence, Waveform, CANONICAL_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, Manifest};
use crate::model::{
    load_embedding_file, model_input, Frontend, InputSetup, ModelConfig, Stem, StemInputs,
};

/// The stems of one clip, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipStems {
    Audio {
        vocal: Waveform,
        instrumental: Option<Waveform>,
    },
    Embedding {
        vocal: FeatureSequence,
        instrumental: Option<FeatureSequence>,
    },
}

impl ClipStems {
    /// Length of the vocal stem in seconds; segments are laid out on it.
    pub fn duration_s(&self) -> f64 {
        match self {
            ClipStems::Audio { vocal, .. } => vocal.duration_s(),
            ClipStems::Embedding { vocal, .. } => vocal.duration_s(),
        }
    }
}

/// Reads a WAV stem and brings it to the canonical sample rate.
pub fn load_audio(path: &std::path::Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() == CANONICAL_SAMPLE_RATE {
        Ok(w)
    } else {
        resample(&w, CANONICAL_SAMPLE_RATE)
    }
}

/// Loads what the front-end and input setup need: WAV stems for waveform
/// front-ends, embedding files otherwise. The instrumental is skipped for
/// the `V` setup.
pub fn load_stems(
    m: &Manifest,
    rec: &ClipRecord,
    model_cfg: &ModelConfig,
    setup: InputSetup,
) -> Result<ClipStems> {
    let want_ins = setup != InputSetup::V;
    if model_cfg.frontend == Frontend::EmbeddingFiles {
        if setup == InputSetup::M {
            return Err(Error::Input(
                "the M setup needs a waveform front-end: mixtures have no embedding files".into(),
            ));
        }
        let voc_path = rec
            .embedding_voc_path
            .as_deref()
            .ok_or_else(|| Error::Input(format!("{}: no embedding_voc_path", rec.clip_id)))?;
        let vocal = load_embedding_file(m.resolve(voc_path))?;
        let instrumental = if want_ins {
            let p = rec
                .embedding_ins_path
                .as_deref()
                .ok_or_else(|| Error::Input(format!("{}: no embedding_ins_path", rec.clip_id)))?;
            Some(load_embedding_file(m.resolve(p))?)
        } else {
            None
        };
        return Ok(ClipStems::Embedding {
            vocal,
            instrumental,
        });
    }
    let vocal = load_audio(&m.resolve(&rec.vocal_path))?;
    let instrumental = if want_ins {
        if !rec.has_instrumental() {
            return Err(Error::Input(format!(
                "{}: input setup {setup} needs an instrumental stem",
                rec.clip_id
            )));
        }
        Some(load_audio(&m.resolve(&rec.instrumental_path))?)
    } else {
        None
    };
    Ok(ClipStems::Audio {
        vocal,
        instrumental,
    })
}

/// Start times of the consecutive `dur_s` segments covering a clip; the
/// last one is zero-padded when the clip is not a whole multiple.
pub fn segment_starts(clip_dur_s: f64, dur_s: f64) -> Vec<f64> {
    // tolerate float noise in durations that are whole multiples
    let n = ((clip_dur_s / dur_s) - 1e-9).ceil().max(1.0) as usize;
    (0..n).map(|k| k as f64 * dur_s).collect()
}

fn audio_features(
    model_cfg: &ModelConfig,
    setup: InputSetup,
    vocal: Waveform,
    instrumental: Option<Waveform>,
) -> Result<FeatureSequence> {
    let mixture = match (setup, &instrumental) {
        (InputSetup::M, Some(ins)) => Some(Stem::Audio(mix_stems(ins, &vocal)?)),
        _ => None,
    };
    let voc = Stem::Audio(vocal);
    let ins = instrumental.map(Stem::Audio);
    model_input(
        model_cfg,
        setup,
        &StemInputs {
            instrumental: ins.as_ref(),
            vocal: Some(&voc),
            mixture: mixture.as_ref(),
        },
    )
}

fn window_seconds(seq: &FeatureSequence, start_s: f64, dur_s: f64) -> Result<FeatureSequence> {
    let rate = seq.frame_rate();
    let start = ((start_s * rate).round() as usize).min(seq.frames() - 1);
    let len = ((dur_s * rate).round() as usize).max(1);
    seq.window(start, len)
}

/// Model input for `[start_s, start_s + dur_s)` of a clip, without
/// augmentation.
pub fn segment_input(
    model_cfg: &ModelConfig,
    setup: InputSetup,
    stems: &ClipStems,
    start_s: f64,
    dur_s: f64,
) -> Result<FeatureSequence> {
    match stems {
        ClipStems::Audio {
            vocal,
            instrumental,
        } => {
            let voc = segment_clip(vocal, start_s, dur_s)?;
            let ins = instrumental
                .as_ref()
                .map(|w| segment_clip(w, start_s, dur_s))
                .transpose()?;
            audio_features(model_cfg, setup, voc, ins)
        }
        ClipStems::Embedding {
            vocal,
            instrumental,
        } => {
            let voc = Stem::Embedding(window_seconds(vocal, start_s, dur_s)?);
            let ins = instrumental
                .as_ref()
                .map(|s| window_seconds(s, start_s, dur_s).map(Stem::Embedding))
                .transpose()?;
            model_input(
                model_cfg,
                setup,
                &StemInputs {
                    instrumental: ins.as_ref(),
                    vocal: Some(&voc),
                    mixture: None,
                },
            )
        }
    }
}

/// Model input for an augmented training segment. Only waveform stems can
/// be augmented; a clip without an instrumental (the `V` setup) gets a
/// silent one so the vocal noise still applies.
#[allow(clippy::too_many_arguments)]
pub fn augmented_input(
    model_cfg: &ModelConfig,
    setup: InputSetup,
    rec: &ClipRecord,
    stems: &ClipStems,
    start_s: f64,
    dur_s: f64,
    plan: &AugmentPlan<'_>,
    load_instrumental: &dyn Fn(&ClipRecord) -> Result<Waveform>,
    seed_value: u64,
) -> Result<FeatureSequence> {
    let ClipStems::Audio {
        vocal,
        instrumental,
    } = stems
    else {
        return Err(Error::Config(
            "augmentation needs a waveform front-end".into(),
        ));
    };
    let silent;
    let ins = match instrumental {
        Some(w) => w,
        None => {
            silent = Waveform::zeros(vocal.len(), vocal.sample_rate())?;
            &silent
        }
    };
    let pair = augment_segment(
        rec,
        vocal,
        ins,
        start_s,
        dur_s,
        plan,
        load_instrumental,
        seed_value,
    )?;
    let ins = instrumental.as_ref().map(|_| pair.instrumental);
    audio_features(model_cfg, setup, pair.vocal, ins)
}
