use rand::Rng;

use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, TempoIndex};

/// Picks a replacement instrumental from the clip's own tempo bucket,
/// uniformly among the other members. A clip alone in its bucket gets itself
/// back.
pub fn beat_match_select<R: Rng + ?Sized>(
    idx: &TempoIndex,
    clip: &ClipRecord,
    rng: &mut R,
) -> Result<String> {
    let (_, bucket) = idx.bucket_for(clip)?;
    let candidates: Vec<&String> = bucket.iter().filter(|id| **id != clip.clip_id).collect();
    if candidates.is_empty() {
        return Ok(clip.clip_id.clone());
    }
    Ok(candidates[rng.random_range(0..candidates.len())].clone())
}

/// Bar period estimated as the median spacing between consecutive downbeats.
pub fn bar_period(downbeats_s: &[f64]) -> Option<f64> {
    let mut gaps: Vec<f64> = downbeats_s.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Some(if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    })
}

/// Distance between a downbeat's bar phase and the vocal segment's bar phase.
pub fn phase_error(downbeat_s: f64, vocal_start_s: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) if p > 0.0 => (downbeat_s.rem_euclid(p) - vocal_start_s.rem_euclid(p)).abs(),
        _ => 0.0,
    }
}

/// Chooses the replacement downbeat whose bar phase best matches where the
/// vocal segment starts, among downbeats leaving room for the whole segment.
/// Ties go to the earliest downbeat.
pub fn downbeat_align(
    replacement_downbeats_s: &[f64],
    vocal_segment_start_s: f64,
    segment_dur_s: f64,
    replacement_dur_s: f64,
) -> Result<f64> {
    let period = bar_period(replacement_downbeats_s);
    let mut best: Option<(f64, f64)> = None;
    for &d in replacement_downbeats_s {
        if d + segment_dur_s > replacement_dur_s {
            continue;
        }
        let err = phase_error(d, vocal_segment_start_s, period);
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((d, err));
        }
    }
    best.map(|(d, _)| d).ok_or_else(|| {
        Error::Alignment(format!(
            "no downbeat leaves {segment_dur_s}s before the {replacement_dur_s}s end"
        ))
    })
}
