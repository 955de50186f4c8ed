use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const MIX_PEAK: f64 = 0.95;

/// Sample-wise sum of two stems (the shorter one zero-padded), rescaled to a
/// peak of 0.95 only when the raw sum clips.
pub fn mix_stems(ins: &Waveform, voc: &Waveform) -> Result<Waveform> {
    if ins.sample_rate() != voc.sample_rate() {
        return Err(Error::Rate(ins.sample_rate(), voc.sample_rate()));
    }
    let n = ins.len().max(voc.len());
    let at = |w: &Waveform, i: usize| w.samples().get(i).copied().unwrap_or(0.0);
    let mut sum: Vec<f64> = (0..n).map(|i| at(ins, i) + at(voc, i)).collect();
    let peak = sum.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        let k = MIX_PEAK / peak;
        sum.iter_mut().for_each(|s| *s *= k);
    }
    Waveform::new(sum, ins.sample_rate())
}
