//! Singing-voice augmentation: colored noise on the vocal stem and
//! beat-matched replacement of the instrumental stem.

mod beat;
mod mix;
mod rawboost;

pub use beat::{bar_period, beat_match_select, downbeat_align, phase_error};
pub use mix::{mix_stems, MIX_PEAK};
pub use rawboost::{
    filter_same, random_fir_coloration, rawboost_si, Boosted, FilterCoeffs, RawBoostConfig,
};

use serde::{Deserialize, Serialize};

use crate::dsp::{measure_snr, segment_clip, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, Manifest, TempoIndex};
use crate::seed;

/// Sidecar describing how an augmented pair was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_clip_id: String,
    /// `None` when the original instrumental was kept.
    pub replacement_clip_id: Option<String>,
    /// Where the instrumental segment starts inside its own track.
    pub offset_s: f64,
    /// `None` when no noise was injected.
    pub realized_snr_db: Option<f64>,
    pub seed: u64,
}

/// An augmented (vocal, instrumental) segment pair of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub vocal: Waveform,
    pub instrumental: Waveform,
    pub provenance: Provenance,
}

impl AugmentedPair {
    pub fn mixture(&self) -> Result<Waveform> {
        mix_stems(&self.instrumental, &self.vocal)
    }
}

/// Which augmentations to apply to a segment.
#[derive(Debug, Clone, Default)]
pub struct AugmentPlan<'a> {
    pub rawboost: Option<&'a RawBoostConfig>,
    pub beat_matching: Option<(&'a TempoIndex, &'a Manifest)>,
}

/// Cuts `[start_s, start_s + dur_s)` out of a clip's stems and applies the
/// planned augmentations with a generator seeded from `seed`.
///
/// Beat matching swaps in a same-bucket instrumental starting at the
/// phase-aligned downbeat. If no downbeat of the replacement leaves room for
/// the segment, the original instrumental is kept.
#[allow(clippy::too_many_arguments)]
pub fn augment_segment(
    clip: &ClipRecord,
    vocal: &Waveform,
    instrumental: &Waveform,
    start_s: f64,
    dur_s: f64,
    plan: &AugmentPlan<'_>,
    load_instrumental: &dyn Fn(&ClipRecord) -> Result<Waveform>,
    seed_value: u64,
) -> Result<AugmentedPair> {
    let mut rng = seed::rng(seed_value);
    let voc_seg = segment_clip(vocal, start_s, dur_s)?;

    let mut replacement_clip_id = None;
    let mut offset_s = start_s;
    let mut ins_seg = None;
    if let Some((idx, manifest)) = plan.beat_matching {
        let chosen = beat_match_select(idx, clip, &mut rng)?;
        if chosen != clip.clip_id {
            let rec = manifest
                .get(&chosen)
                .ok_or_else(|| Error::Lookup(format!("replacement {chosen:?} not in manifest")))?;
            let wave = load_instrumental(rec)?;
            match downbeat_align(&rec.downbeats_s, start_s, dur_s, wave.duration_s()) {
                Ok(d) => {
                    ins_seg = Some(segment_clip(&wave, d, dur_s)?);
                    offset_s = d;
                    replacement_clip_id = Some(chosen);
                }
                Err(Error::Alignment(msg)) => {
                    log::debug!("{}: keeping original instrumental ({msg})", clip.clip_id);
                }
                Err(e) => return Err(e),
            }
        }
    }
    let instrumental = match ins_seg {
        Some(s) => s,
        None => segment_clip(instrumental, start_s, dur_s)?,
    };

    let (vocal_out, realized_snr_db) = match plan.rawboost {
        Some(cfg) => {
            let boosted = rawboost_si(&voc_seg, cfg, &mut rng)?;
            if boosted.gain > 0.0 {
                let noise: Vec<f64> = boosted
                    .waveform
                    .samples()
                    .iter()
                    .zip(voc_seg.samples())
                    .map(|(o, i)| o - i)
                    .collect();
                let snr = measure_snr(&voc_seg, &Waveform::new(noise, voc_seg.sample_rate())?)?;
                (boosted.waveform, Some(snr))
            } else {
                (boosted.waveform, None)
            }
        }
        None => (voc_seg, None),
    };

    Ok(AugmentedPair {
        vocal: vocal_out,
        instrumental,
        provenance: Provenance {
            source_clip_id: clip.clip_id.clone(),
            replacement_clip_id,
            offset_s,
            realized_snr_db,
            seed: seed_value,
        },
    })
}
