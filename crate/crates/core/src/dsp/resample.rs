use super::{DspError, TARGET_RATE_HZ};
use crate::ingest::Recording;
use std::f64::consts::PI;

pub const ANTI_ALIAS_TAPS: usize = 63;
/// Cutoff as a fraction of the output Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.45;

/// Hamming-windowed sinc low-pass for 2:1 decimation, normalized to unit DC
/// gain. Cutoff is `0.45 ×` the output Nyquist, expressed in cycles per input
/// sample.
pub fn anti_alias_taps() -> Vec<f64> {
    let n = ANTI_ALIAS_TAPS;
    let mid = (n / 2) as f64;
    // Output Nyquist is a quarter of the input rate.
    let fc = CUTOFF_FRACTION * 0.25;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let k = i as f64 - mid;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    // mirror exactly so the filter is zero-phase to the last bit
    for i in 0..n / 2 {
        taps[n - 1 - i] = taps[i];
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub samples: Vec<f64>,
    /// An odd trailing sample was dropped before decimating.
    pub trimmed: bool,
}

/// Index into a half-sample symmetric extension of `0..n`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Zero-phase low-pass then keep every other sample.
pub fn resample_2to1(signal: &[f64]) -> Result<Resampled, DspError> {
    if signal.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let trimmed = signal.len() % 2 == 1;
    let x = &signal[..signal.len() - trimmed as usize];
    if x.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let taps = anti_alias_taps();
    let half = (taps.len() / 2) as isize;
    let n = x.len();
    let samples = (0..n / 2)
        .map(|m| {
            let c = (2 * m) as isize;
            let lo = c - half;
            if lo >= 0 && c + half < n as isize {
                let seg = &x[lo as usize..lo as usize + taps.len()];
                taps.iter().zip(seg).map(|(t, v)| t * v).sum()
            } else {
                taps.iter()
                    .enumerate()
                    .map(|(k, t)| t * x[reflect(lo + k as isize, n)])
                    .sum()
            }
        })
        .collect();
    Ok(Resampled { samples, trimmed })
}

/// Halves the sample rate until it reaches 128 Hz.
pub fn resample_to_target(rec: &Recording) -> Result<Recording, DspError> {
    let mut rate = rec.sample_rate_hz;
    let mut halvings = 0;
    while rate > TARGET_RATE_HZ {
        rate /= 2.0;
        halvings += 1;
    }
    if rate != TARGET_RATE_HZ {
        return Err(DspError::UnsupportedRate(rec.sample_rate_hz));
    }
    let mut out = rec.clone();
    out.sample_rate_hz = TARGET_RATE_HZ;
    for _ in 0..halvings {
        let mut trimmed = false;
        for row in out.samples.iter_mut() {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let r = resample_2to1(&x)?;
            trimmed |= r.trimmed;
            *row = r.samples.into_iter().map(|v| v as f32).collect();
        }
        if trimmed {
            out.warnings
                .push("odd sample count: trailing sample dropped before resampling".into());
        }
    }
    Ok(out)
}
