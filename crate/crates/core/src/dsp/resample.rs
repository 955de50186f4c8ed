use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

const HALF_TAPS: usize = 16;
const KAISER_BETA: f64 = 8.0;

/// Windowed-sinc resampling (Kaiser, beta 8, 16 zero crossings per side).
///
/// Interpolation weights are renormalized per output sample, so DC is kept
/// exactly even where the kernel hangs off either end of the input.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    let src_rate = w.sample_rate();
    if src_rate == target_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / src_rate as f64;
    let out_len = ((w.len() as f64 * ratio).round() as usize).max(1);
    // widen the kernel when decimating so it also acts as the anti-alias filter
    let cutoff = ratio.min(1.0);
    let support = HALF_TAPS as f64 / cutoff;
    let x = w.samples();
    let norm = bessel_i0(KAISER_BETA);

    let out = (0..out_len)
        .map(|n| {
            let pos = n as f64 / ratio;
            let lo = (pos - support).ceil().max(0.0) as usize;
            let hi = ((pos + support).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = pos - k as f64;
                let r = d / support;
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
                let h = cutoff * sinc(cutoff * d) * win;
                acc += h * xk;
                wsum += h;
            }
            if wsum.abs() > 1e-12 {
                acc / wsum
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(out, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
