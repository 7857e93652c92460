//! Deterministic synthetic EEG with interictal, preictal and ictal states.
//!
//! Background is per-channel pink-like noise with a weak alpha rhythm. The
//! last `preictal_shift_minutes` before each onset add a beta component
//! (18–24 Hz, patient-specific) whose phase drifts independently per channel,
//! so cross-channel coherence drops. Seizures are a high-amplitude ~3 Hz
//! oscillation shared by all channels.

use super::{IngestError, PhysicalRange, Recording, SeizureAnnotations, SeizureEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

const MONTAGE: [&str; 22] = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4",
    "C4-P4", "P4-O2", "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ", "P7-T7", "T7-FT9",
    "FT9-FT10", "FT10-T8",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub seizure_onsets_s: Vec<f64>,
    pub seizure_duration_s: f64,
    pub channel_count: usize,
    pub sample_rate_hz: f64,
    /// Standard deviation of the background, in microvolts.
    pub background_noise_scale: f64,
    pub preictal_shift_minutes: f64,
    /// Patient seed: fixes the patient's rhythms and, with
    /// `recording_index`, the noise.
    pub seed: u64,
    /// Distinguishes recordings of one patient; each index draws its own
    /// noise stream.
    pub recording_index: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 3600.0,
            seizure_onsets_s: Vec::new(),
            seizure_duration_s: 40.0,
            channel_count: 22,
            sample_rate_hz: 256.0,
            background_noise_scale: 20.0,
            preictal_shift_minutes: 10.0,
            seed: 0,
            recording_index: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidConfig(m));
        let positive = [
            ("duration_s", self.duration_s),
            ("seizure_duration_s", self.seizure_duration_s),
            ("sample_rate_hz", self.sample_rate_hz),
            ("background_noise_scale", self.background_noise_scale),
            ("preictal_shift_minutes", self.preictal_shift_minutes),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.channel_count == 0 {
            return bad("channel_count must be at least 1".into());
        }
        let min_gap = 2.0 * self.preictal_shift_minutes * 60.0;
        for w in self.seizure_onsets_s.windows(2) {
            if w[1] - w[0] < min_gap {
                return bad(format!(
                    "onsets {} and {} closer than {min_gap} s",
                    w[0], w[1]
                ));
            }
        }
        for &o in &self.seizure_onsets_s {
            if o < 0.0 || o + self.seizure_duration_s > self.duration_s {
                return bad(format!(
                    "seizure at {o} s does not fit in {} s",
                    self.duration_s
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Interictal,
    Preictal,
    Ictal,
}

/// Generates a recording; a pure function of `cfg`.
pub fn synth_recording(cfg: &SynthConfig) -> Result<Recording, IngestError> {
    cfg.validate()?;
    let rate = cfg.sample_rate_hz;
    let n = (cfg.duration_s * rate).round() as usize;
    let scale = cfg.background_noise_scale;
    let preictal_s = cfg.preictal_shift_minutes * 60.0;

    // Patient traits come from their own stream so they do not depend on the
    // recording length or channel count.
    let mut traits = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_CAFE);
    let beta_hz: f64 = traits.random_range(18.0..24.0);
    let ictal_hz: f64 = traits.random_range(2.6..3.4);
    let ictal_phase: f64 = traits.random_range(0.0..TAU);

    let state_at = |t: f64| -> State {
        for &o in &cfg.seizure_onsets_s {
            if t >= o && t < o + cfg.seizure_duration_s {
                return State::Ictal;
            }
            if t >= o - preictal_s && t < o {
                return State::Preictal;
            }
        }
        State::Interictal
    };
    let states: Vec<State> = (0..n).map(|i| state_at(i as f64 / rate)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.recording_index);
    let mut samples = Vec::with_capacity(cfg.channel_count);
    for _ in 0..cfg.channel_count {
        let gain: f64 = rng.random_range(0.7..1.3);
        let alpha_phase: f64 = rng.random_range(0.0..TAU);
        let mut beta_phase: f64 = rng.random_range(0.0..TAU);

        // Kellet's economy pink filter, normalized afterwards.
        let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
        let mut pink = Vec::with_capacity(n);
        for _ in 0..n {
            let w: f64 = rng.sample(StandardNormal);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            pink.push(b0 + b1 + b2 + w * 0.1848);
        }
        let mean = pink.iter().sum::<f64>() / n as f64;
        let sd = (pink.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64)
            .sqrt()
            .max(1e-12);

        let mut row = Vec::with_capacity(n);
        for (i, (&p, &state)) in pink.iter().zip(&states).enumerate() {
            let t = i as f64 / rate;
            let white: f64 = rng.sample(StandardNormal);
            let mut v = scale * gain * (0.9 * (p - mean) / sd + 0.3 * white)
                + 0.3 * scale * (TAU * 10.0 * t + alpha_phase).sin();
            // Independent phase random walk per channel.
            let drift: f64 = rng.sample(StandardNormal);
            beta_phase += 0.08 * drift;
            match state {
                State::Interictal => {}
                State::Preictal => v += 1.2 * scale * gain * (TAU * beta_hz * t + beta_phase).sin(),
                State::Ictal => v += 8.0 * scale * gain * (TAU * ictal_hz * t + ictal_phase).sin(),
            }
            row.push(v as f32);
        }
        samples.push(row);
    }

    let events = cfg
        .seizure_onsets_s
        .iter()
        .map(|&onset_s| SeizureEvent {
            onset_s,
            offset_s: onset_s + cfg.seizure_duration_s,
        })
        .collect();
    let channels = (0..cfg.channel_count)
        .map(|c| {
            MONTAGE
                .get(c)
                .map_or_else(|| format!("CH{c}"), |s| s.to_string())
        })
        .collect();
    let physical_ranges = samples
        .iter()
        .map(|r: &Vec<f32>| PhysicalRange::covering(r))
        .collect();
    let rec = Recording {
        id: match cfg.recording_index {
            0 => format!("synth-{}", cfg.seed),
            i => format!("synth-{}-{i}", cfg.seed),
        },
        sample_rate_hz: rate,
        channels,
        samples,
        physical_ranges,
        start_offset_s: 0.0,
        annotations: SeizureAnnotations::new(events)?,
        warnings: Vec::new(),
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(onsets: Vec<f64>) -> SynthConfig {
        SynthConfig {
            duration_s: 1800.0,
            seizure_onsets_s: onsets,
            channel_count: 3,
            preictal_shift_minutes: 5.0,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = small(vec![900.0]);
        assert_eq!(
            synth_recording(&cfg).unwrap(),
            synth_recording(&cfg).unwrap()
        );
        let other = SynthConfig {
            seed: 12,
            ..cfg.clone()
        };
        assert_ne!(
            synth_recording(&cfg).unwrap().samples,
            synth_recording(&other).unwrap().samples
        );
    }

    #[test]
    fn recordings_of_one_patient_share_traits_not_noise() {
        let cfg = small(vec![]);
        let a = synth_recording(&cfg).unwrap();
        let b = synth_recording(&SynthConfig {
            recording_index: 3,
            ..cfg
        })
        .unwrap();
        assert_ne!(a.samples, b.samples);
        assert_eq!((a.id.as_str(), b.id.as_str()), ("synth-11", "synth-11-3"));
    }

    #[test]
    fn annotations_follow_configured_onsets() {
        let cfg = SynthConfig {
            duration_s: 18_100.0,
            seizure_onsets_s: vec![18_000.0],
            seizure_duration_s: 40.0,
            channel_count: 1,
            sample_rate_hz: 16.0,
            ..SynthConfig::default()
        };
        let rec = synth_recording(&cfg).unwrap();
        assert_eq!(
            rec.annotations.events(),
            &[SeizureEvent {
                onset_s: 18_000.0,
                offset_s: 18_040.0
            }]
        );
    }

    /// Band power summed over DFT bins in `[lo, hi]` Hz, by direct summation.
    fn band_power(x: &[f32], rate: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let df = rate / n as f64;
        let (k0, k1) = ((lo / df).ceil() as usize, (hi / df).floor() as usize);
        (k0..=k1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let ph = TAU * (k * i) as f64 / n as f64;
                    re += v as f64 * ph.cos();
                    im -= v as f64 * ph.sin();
                }
                (re * re + im * im) / n as f64
            })
            .sum()
    }

    #[test]
    fn ictal_three_hz_power_dominates_interictal() {
        let rec = synth_recording(&small(vec![900.0])).unwrap();
        let rate = rec.sample_rate_hz;
        let seg = |t0: f64| &rec.samples[0][(t0 * rate) as usize..((t0 + 40.0) * rate) as usize];
        let ictal = band_power(seg(900.0), rate, 2.5, 3.5);
        let inter = band_power(seg(100.0), rate, 2.5, 3.5);
        assert!(ictal >= 10.0 * inter, "ictal {ictal} vs interictal {inter}");
    }

    #[test]
    fn preictal_beta_power_rises() {
        let rec = synth_recording(&small(vec![900.0])).unwrap();
        let rate = rec.sample_rate_hz;
        let seg = |t0: f64| &rec.samples[1][(t0 * rate) as usize..((t0 + 20.0) * rate) as usize];
        let pre = band_power(seg(850.0), rate, 17.0, 25.0);
        let inter = band_power(seg(100.0), rate, 17.0, 25.0);
        assert!(pre >= 3.0 * inter, "preictal {pre} vs interictal {inter}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let close = small(vec![600.0, 700.0]);
        assert!(matches!(
            synth_recording(&close),
            Err(IngestError::InvalidConfig(_))
        ));
        let neg = SynthConfig {
            duration_s: -1.0,
            ..small(vec![])
        };
        assert!(matches!(
            synth_recording(&neg),
            Err(IngestError::InvalidConfig(_))
        ));
        let late = small(vec![1790.0]);
        assert!(matches!(
            synth_recording(&late),
            Err(IngestError::InvalidConfig(_))
        ));
    }
}
