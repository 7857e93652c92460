//! Browser bindings for three pieces of the pipeline: the wavelet scalogram
//! of a one-second window, the Mexican-hat curve itself, and the smoothing
//! and alarm stage run over a score stream.
//!
//! The exported functions are thin wrappers over plain Rust ones so that the
//! logic is testable on the host without a JavaScript runtime.

use ictal::dsp::{cwt_window, mexican_hat};
use ictal::predictor::{PredictorState, SmoothingPolicy};
use ictal::ScaleBank;
use wasm_bindgen::prelude::*;

/// Samples per analysis window.
pub const WINDOW: usize = 128;

/// Row-major `scales × 128` coefficients over the default dyadic bank.
pub fn scalogram_values(window: &[f64]) -> Result<Vec<f64>, String> {
    let bank = ScaleBank::default();
    let ns = bank.len();
    // The core transform is time-major; rows per scale are easier to draw.
    let coeffs = &cwt_window(window, &bank).map_err(|e| e.to_string())?;
    Ok((0..ns)
        .flat_map(|j| (0..WINDOW).map(move |t| coeffs[t * ns + j]))
        .collect())
}

/// ψ sampled at `points` evenly spaced positions on `[-half_width, half_width]`.
pub fn hat_values(half_width: f64, points: usize) -> Result<Vec<f64>, String> {
    if !(half_width > 0.0 && half_width.is_finite()) || points < 2 {
        return Err("need a positive half-width and at least two points".into());
    }
    let step = 2.0 * half_width / (points - 1) as f64;
    Ok((0..points)
        .map(|k| mexican_hat(-half_width + k as f64 * step))
        .collect())
}

/// Per-step outputs of a simulated score stream.
#[wasm_bindgen]
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlarmSimulation {
    gap: Vec<f64>,
    ema: Vec<f64>,
    alarms: Vec<f64>,
}

#[wasm_bindgen]
impl AlarmSimulation {
    /// Smoothed preictal minus smoothed interictal score, one per step.
    pub fn gap(&self) -> Vec<f64> {
        self.gap.clone()
    }

    /// Decision average, one per step.
    pub fn ema(&self) -> Vec<f64> {
        self.ema.clone()
    }

    /// Times, in seconds, at which an alarm fired.
    pub fn alarms(&self) -> Vec<f64> {
        self.alarms.clone()
    }
}

/// Runs the streaming predictor over scores sampled once per second.
pub fn simulate(
    s_p: &[f64],
    s_i: &[f64],
    policy: &SmoothingPolicy,
) -> Result<AlarmSimulation, String> {
    if s_p.len() != s_i.len() {
        return Err(format!(
            "{} preictal scores but {} interictal",
            s_p.len(),
            s_i.len()
        ));
    }
    policy.validate().map_err(|e| e.to_string())?;
    let mut state = PredictorState::default();
    let mut out = AlarmSimulation::default();
    for (k, (&p, &i)) in s_p.iter().zip(s_i).enumerate() {
        let r = state
            .step(policy, p, i, k as f64)
            .map_err(|e| e.to_string())?;
        out.gap.push(r.smoothed_p - r.smoothed_i);
        out.ema.push(r.ema);
        if r.alarm {
            out.alarms.push(r.t_s);
        }
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn scalogram(window: &[f64]) -> Result<Vec<f64>, JsError> {
    scalogram_values(window).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scale_count() -> usize {
    ScaleBank::default().len()
}

#[wasm_bindgen]
pub fn mexican_hat_curve(half_width: f64, points: usize) -> Result<Vec<f64>, JsError> {
    hat_values(half_width, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_alarms(
    s_p: &[f64],
    s_i: &[f64],
    score_alpha: f64,
    delta: f64,
    decision_alpha: f64,
    alarm_threshold: f64,
    refractory_s: f64,
) -> Result<AlarmSimulation, JsError> {
    let policy = SmoothingPolicy {
        score_alpha,
        delta,
        decision_alpha,
        alarm_threshold,
        refractory_s,
    };
    simulate(s_p, s_i, &policy).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64) -> Vec<f64> {
        (0..WINDOW)
            .map(|n| (2.0 * std::f64::consts::PI * hz * n as f64 / WINDOW as f64).sin())
            .collect()
    }

    #[test]
    fn scalogram_has_one_row_per_scale() {
        let s = scalogram_values(&tone(8.0)).unwrap();
        assert_eq!(s.len(), scale_count() * WINDOW);
        assert!(scalogram_values(&[0.0; 64]).is_err());
    }

    #[test]
    fn eight_hertz_magnitude_peaks_at_scale_four() {
        let s = scalogram_values(&tone(8.0)).unwrap();
        let magnitude: Vec<f64> = s
            .chunks(WINDOW)
            .map(|row| row.iter().map(|v| v.abs()).sum())
            .collect();
        let best = (0..magnitude.len())
            .max_by(|&a, &b| magnitude[a].total_cmp(&magnitude[b]))
            .unwrap();
        assert_eq!(ScaleBank::default().scales()[best], 4.0);
    }

    #[test]
    fn hat_curve_is_symmetric_with_peak_at_zero() {
        let c = hat_values(5.0, 101).unwrap();
        assert_eq!(c[50], mexican_hat(0.0));
        assert!(c
            .iter()
            .zip(c.iter().rev())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(hat_values(0.0, 10).is_err());
        assert!(hat_values(1.0, 1).is_err());
    }

    #[test]
    fn steady_preictal_evidence_alarms_once_per_refractory_period() {
        let n = 200;
        let policy = SmoothingPolicy {
            refractory_s: 100.0,
            ..SmoothingPolicy::default()
        };
        let sim = simulate(&vec![0.9; n], &vec![0.1; n], &policy).unwrap();
        assert_eq!(sim.ema.len(), n);
        assert_eq!(sim.alarms().len(), 2);
        assert!(sim.alarms[1] - sim.alarms[0] >= 100.0);
    }

    #[test]
    fn balanced_scores_never_alarm() {
        let sim = simulate(&[0.5; 300], &[0.5; 300], &SmoothingPolicy::default()).unwrap();
        assert!(sim.alarms().is_empty());
        assert!(sim.gap().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn mismatched_streams_and_bad_policies_are_rejected() {
        assert!(simulate(&[0.5; 3], &[0.5; 2], &SmoothingPolicy::default()).is_err());
        let bad = SmoothingPolicy {
            alarm_threshold: 1.5,
            ..SmoothingPolicy::default()
        };
        assert!(simulate(&[0.5], &[0.5], &bad).is_err());
    }
}
