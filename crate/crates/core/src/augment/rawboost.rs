use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Dense grid used to sample the desired response before the inverse DFT.
const DESIGN_GRID: usize = 4096;

/// Parameters of the signal-independent additive colored-noise augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBoostConfig {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub n_bands: usize,
    pub band_gain_db_range: [f64; 2],
    pub fir_taps: usize,
}

impl Default for RawBoostConfig {
    fn default() -> Self {
        Self {
            snr_db_min: 10.0,
            snr_db_max: 40.0,
            n_bands: 5,
            band_gain_db_range: [-20.0, 20.0],
            fir_taps: 127,
        }
    }
}

impl RawBoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db_min.is_nan() || self.snr_db_max.is_nan() || self.snr_db_min > self.snr_db_max
        {
            return Err(Error::Config(format!(
                "snr_db_min {} must not exceed snr_db_max {}",
                self.snr_db_min, self.snr_db_max
            )));
        }
        if self.n_bands == 0 {
            return Err(Error::Config("n_bands must be at least 1".into()));
        }
        let [lo, hi] = self.band_gain_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!(
                "invalid band_gain_db_range [{lo}, {hi}]"
            )));
        }
        if self.fir_taps < 3 || self.fir_taps.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fir_taps must be odd and at least 3, got {}",
                self.fir_taps
            )));
        }
        Ok(())
    }
}

/// Linear-phase FIR taps plus the band gains they were designed from.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs {
    pub taps: Vec<f64>,
    pub band_gains_db: Vec<f64>,
}

impl FilterCoeffs {
    /// Band centers as a fraction of Nyquist.
    pub fn band_centers(&self) -> Vec<f64> {
        let n = self.band_gains_db.len();
        (0..n).map(|b| (b as f64 + 0.5) / n as f64).collect()
    }

    /// `|H(e^{j pi nu})|` with `nu` a fraction of Nyquist.
    pub fn magnitude_at(&self, nu: f64) -> f64 {
        let half = (self.taps.len() / 2) as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &h) in self.taps.iter().enumerate() {
            let w = PI * nu * (i as f64 - half);
            re += h * w.cos();
            im -= h * w.sin();
        }
        (re * re + im * im).sqrt()
    }
}

/// Desired gain in dB: flat over the central half of each band, with
/// linear-in-dB ramps between neighbouring plateaus. The plateaus keep the
/// windowed response at each band center close to the drawn gain.
fn desired_db(nu: f64, centers: &[f64], gains: &[f64]) -> f64 {
    let quarter = 0.25 / centers.len() as f64;
    if nu <= centers[0] + quarter {
        return gains[0];
    }
    for i in 1..centers.len() {
        let start = centers[i] - quarter;
        if nu <= start {
            let prev_end = centers[i - 1] + quarter;
            let t = (nu - prev_end) / (start - prev_end);
            return gains[i - 1] + t * (gains[i] - gains[i - 1]);
        }
        if nu <= centers[i] + quarter {
            return gains[i];
        }
    }
    gains[gains.len() - 1]
}

/// Frequency-sampling design of a random coloration filter: one uniform gain
/// per linearly spaced band, zero-phase inverse DFT, centered and
/// Hann-windowed to `fir_taps` taps.
pub fn random_fir_coloration<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RawBoostConfig,
) -> Result<FilterCoeffs> {
    cfg.validate()?;
    let [lo, hi] = cfg.band_gain_db_range;
    let band_gains_db: Vec<f64> = (0..cfg.n_bands)
        .map(|_| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect();
    let centers: Vec<f64> = (0..cfg.n_bands)
        .map(|b| (b as f64 + 0.5) / cfg.n_bands as f64)
        .collect();

    let half_grid = DESIGN_GRID / 2;
    let amp: Vec<f64> = (0..=half_grid)
        .map(|k| {
            let nu = k as f64 / half_grid as f64;
            10f64.powf(desired_db(nu, &centers, &band_gains_db) / 20.0)
        })
        .collect();

    let half = (cfg.fir_taps / 2) as i64;
    let taps = (-half..=half)
        .map(|n| {
            let mut acc = amp[0] + amp[half_grid] * (PI * n as f64).cos();
            for (k, a) in amp.iter().enumerate().take(half_grid).skip(1) {
                acc += 2.0 * a * (2.0 * PI * k as f64 * n as f64 / DESIGN_GRID as f64).cos();
            }
            let window = 0.5 * (1.0 + (PI * n as f64 / (half + 1) as f64).cos());
            acc / DESIGN_GRID as f64 * window
        })
        .collect();
    Ok(FilterCoeffs {
        taps,
        band_gains_db,
    })
}

/// Centered ("same"-length) FIR filtering.
pub fn filter_same(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    (0..x.len())
        .map(|n| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                // y[n] = sum_k h[k] x[n + half - k]
                let idx = n as i64 + half as i64 - k as i64;
                if idx >= 0 && (idx as usize) < x.len() {
                    acc += h * x[idx as usize];
                }
            }
            acc
        })
        .collect()
}

/// Result of one vocal augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Boosted {
    pub waveform: Waveform,
    /// Drawn SNR target; `+inf` when nothing was injected.
    pub target_snr_db: f64,
    pub gain: f64,
}

/// Adds colored noise `g * z` to a vocal stem, with `g` set so the noise sits
/// at an SNR drawn uniformly from `[snr_db_min, snr_db_max]`. The output is not
/// renormalized.
pub fn rawboost_si<R: Rng + ?Sized>(
    voc: &Waveform,
    cfg: &RawBoostConfig,
    rng: &mut R,
) -> Result<Boosted> {
    cfg.validate()?;
    if voc.is_silent() {
        log::warn!("rawboost: silent vocal, augmentation skipped");
        return Ok(Boosted {
            waveform: voc.clone(),
            target_snr_db: f64::INFINITY,
            gain: 0.0,
        });
    }
    let target_snr_db = if cfg.snr_db_min == cfg.snr_db_max || cfg.snr_db_min.is_infinite() {
        cfg.snr_db_min
    } else {
        rng.random_range(cfg.snr_db_min..=cfg.snr_db_max)
    };
    if target_snr_db == f64::INFINITY {
        return Ok(Boosted {
            waveform: voc.clone(),
            target_snr_db,
            gain: 0.0,
        });
    }
    let coeffs = random_fir_coloration(rng, cfg)?;
    let white: Vec<f64> = (0..voc.len()).map(|_| rng.sample(StandardNormal)).collect();
    let colored = filter_same(&white, &coeffs.taps);
    let noise_power: f64 = colored.iter().map(|v| v * v).sum();
    if noise_power == 0.0 {
        return Err(Error::Numeric("colored noise has zero energy".into()));
    }
    let gain = (voc.power() / (noise_power * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let out = voc
        .samples()
        .iter()
        .zip(&colored)
        .map(|(s, z)| s + gain * z)
        .collect();
    Ok(Boosted {
        waveform: Waveform::new(out, voc.sample_rate())?,
        target_snr_db,
        gain,
    })
}
