//! Mexican-hat continuous wavelet transform over one-second windows.
//!
//! Each window is extended by half-sample symmetric reflection, so a window's
//! coefficients depend on that window alone. With reflection the transform
//! at scale `a` is a fixed linear map on the 128 samples; [`CwtPlan`] folds the
//! padded wavelet support into one 128×128 matrix per scale.

use super::resample::reflect;
use super::{DspError, WINDOW_LEN};
use std::f64::consts::PI;

/// Half-width of the truncated wavelet support, in units of scale.
/// ψ(8) ≈ 8e-14 relative to ψ(0).
const SUPPORT: f64 = 8.0;

/// ψ(x) = 2 / (√3 · π^¼) · (1 − x²) · e^(−x²/2)
pub fn mexican_hat(x: f64) -> f64 {
    let norm = 2.0 / (3f64.sqrt() * PI.powf(0.25));
    let x2 = x * x;
    norm * (1.0 - x2) * (-0.5 * x2).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBank {
    scales: Vec<f64>,
}

impl Default for ScaleBank {
    /// Dyadic scales 1, 2, 4, …, 512.
    fn default() -> Self {
        Self {
            scales: (0..10).map(|k| f64::from(1u32 << k)).collect(),
        }
    }
}

impl ScaleBank {
    pub fn new(scales: Vec<f64>) -> Result<Self, DspError> {
        if scales.is_empty() {
            return Err(DspError::BadScales("no scales".into()));
        }
        if scales.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(DspError::BadScales("scales must be positive".into()));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DspError::BadScales(
                "scales must be strictly increasing".into(),
            ));
        }
        Ok(Self { scales })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

fn check_len(window: &[f64]) -> Result<(), DspError> {
    if window.len() != WINDOW_LEN {
        return Err(DspError::BadLength(window.len()));
    }
    Ok(())
}

/// Reference transform by direct summation over the reflected support.
///
/// Output is row-major `[t][scale]`, `128 × bank.len()`.
pub fn cwt_reference(window: &[f64], bank: &ScaleBank) -> Result<Vec<f64>, DspError> {
    check_len(window)?;
    let n = WINDOW_LEN;
    let ns = bank.len();
    let mut out = vec![0.0; n * ns];
    for (j, &a) in bank.scales().iter().enumerate() {
        let reach = (SUPPORT * a).ceil() as isize;
        let inv_sqrt = 1.0 / a.sqrt();
        for t in 0..n as isize {
            let mut acc = 0.0;
            for u in t - reach..=t + reach {
                acc += window[reflect(u, n)] * inv_sqrt * mexican_hat((u - t) as f64 / a);
            }
            out[t as usize * ns + j] = acc;
        }
    }
    Ok(out)
}

/// Precomputed per-scale operators; matches [`cwt_reference`] to rounding.
#[derive(Debug, Clone)]
pub struct CwtPlan {
    bank: ScaleBank,
    /// `[scale][t][v]`: weight of sample `v` in coefficient `(t, scale)`.
    operators: Vec<f64>,
}

impl CwtPlan {
    pub fn new(bank: &ScaleBank) -> Self {
        let n = WINDOW_LEN;
        let mut operators = vec![0.0; bank.len() * n * n];
        for (j, &a) in bank.scales().iter().enumerate() {
            let reach = (SUPPORT * a).ceil() as isize;
            let inv_sqrt = 1.0 / a.sqrt();
            for t in 0..n as isize {
                let row = &mut operators[(j * n + t as usize) * n..(j * n + t as usize + 1) * n];
                for u in t - reach..=t + reach {
                    row[reflect(u, n)] += inv_sqrt * mexican_hat((u - t) as f64 / a);
                }
            }
        }
        Self {
            bank: bank.clone(),
            operators,
        }
    }

    pub fn bank(&self) -> &ScaleBank {
        &self.bank
    }

    /// Transforms one window into `out`, row-major `[t][scale]`.
    pub fn apply_into<T: Copy + Into<f64>>(
        &self,
        window: &[T],
        out: &mut [f64],
    ) -> Result<(), DspError> {
        if window.len() != WINDOW_LEN {
            return Err(DspError::BadLength(window.len()));
        }
        let n = WINDOW_LEN;
        let ns = self.bank.len();
        let x: Vec<f64> = window.iter().map(|&v| v.into()).collect();
        for j in 0..ns {
            for t in 0..n {
                let row = &self.operators[(j * n + t) * n..(j * n + t + 1) * n];
                out[t * ns + j] = row.iter().zip(&x).map(|(w, v)| w * v).sum();
            }
        }
        Ok(())
    }

    pub fn apply(&self, window: &[f64]) -> Result<Vec<f64>, DspError> {
        let mut out = vec![0.0; WINDOW_LEN * self.bank.len()];
        self.apply_into(window, &mut out)?;
        Ok(out)
    }
}

/// One-off transform of a 128-sample window; build a [`CwtPlan`] when
/// transforming many windows.
pub fn cwt_window(window: &[f64], bank: &ScaleBank) -> Result<Vec<f64>, DspError> {
    check_len(window)?;
    CwtPlan::new(bank).apply(window)
}
