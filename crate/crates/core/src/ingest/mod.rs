//! Recordings, seizure annotations and their on-disk formats.

mod annotations;
mod edf;
mod synth;

pub use annotations::{parse_annotations, parse_chbmit_summary, render_annotations};
pub use edf::{parse_edf, write_edf, PhysicalRange, DIGITAL_MAX, DIGITAL_MIN};
pub use synth::{synth_recording, SynthConfig};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("inconsistent sample rates: {0}")]
    InconsistentRates(String),
    #[error("channel {channel}: value {value} outside physical range [{min}, {max}]")]
    RangeOverflow {
        channel: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("overlapping seizure events at {0} s")]
    OverlappingEvents(f64),
    #[error("malformed summary block: {0}")]
    MalformedBlock(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
}

/// One seizure, in seconds relative to the start of its recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeizureEvent {
    pub onset_s: f64,
    pub offset_s: f64,
}

impl SeizureEvent {
    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

/// Sorted, non-overlapping seizure events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeizureAnnotations {
    events: Vec<SeizureEvent>,
}

impl SeizureAnnotations {
    /// Sorts `events` by onset and validates them.
    pub fn new(mut events: Vec<SeizureEvent>) -> Result<Self, IngestError> {
        for (i, e) in events.iter().enumerate() {
            if !(e.onset_s.is_finite() && e.offset_s.is_finite()) || e.onset_s >= e.offset_s {
                return Err(IngestError::MalformedLine {
                    line: i + 1,
                    reason: format!("onset {} must precede offset {}", e.onset_s, e.offset_s),
                });
            }
        }
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        for w in events.windows(2) {
            if w[1].onset_s < w[0].offset_s {
                return Err(IngestError::OverlappingEvents(w[1].onset_s));
            }
        }
        Ok(Self { events })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[SeizureEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn onsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.onset_s)
    }
}

/// A multi-channel EEG recording in microvolts.
///
/// `start_offset_s` places the recording on a patient-wide timeline; seizure
/// annotations stay relative to the recording start.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    /// `channels × n_samples`.
    pub samples: Vec<Vec<f32>>,
    /// Declared physical range per channel, used when writing EDF.
    pub physical_ranges: Vec<PhysicalRange>,
    pub start_offset_s: f64,
    pub annotations: SeizureAnnotations,
    /// Channels dropped while parsing, and other non-fatal notes.
    pub warnings: Vec<String>,
}

impl Recording {
    /// Builds a recording, deriving physical ranges from the data (rounded
    /// outward so every sample fits).
    pub fn new(
        id: impl Into<String>,
        sample_rate_hz: f64,
        channels: Vec<String>,
        samples: Vec<Vec<f32>>,
        annotations: SeizureAnnotations,
    ) -> Result<Self, IngestError> {
        let physical_ranges = samples
            .iter()
            .map(|row| PhysicalRange::covering(row))
            .collect();
        let rec = Self {
            id: id.into(),
            sample_rate_hz,
            channels,
            samples,
            physical_ranges,
            start_offset_s: 0.0,
            annotations,
            warnings: Vec::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    /// Seizure onsets on the patient timeline.
    pub fn absolute_onsets(&self) -> Vec<f64> {
        self.annotations
            .onsets()
            .map(|o| o + self.start_offset_s)
            .collect()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidRecording(m));
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            ));
        }
        if self.samples.is_empty() {
            return bad("no channels".into());
        }
        if self.channels.len() != self.samples.len() {
            return bad(format!(
                "{} channel labels for {} sample rows",
                self.channels.len(),
                self.samples.len()
            ));
        }
        if self.physical_ranges.len() != self.samples.len() {
            return bad("one physical range per channel required".into());
        }
        let n = self.n_samples();
        if n == 0 {
            return bad("empty channels".into());
        }
        if self.samples.iter().any(|r| r.len() != n) {
            return bad("channel rows differ in length".into());
        }
        let dur = self.duration_s();
        for e in self.annotations.events() {
            if e.onset_s < 0.0 || e.offset_s > dur + 1e-9 {
                return bad(format!(
                    "seizure ({}, {}) outside recording of {} s",
                    e.onset_s, e.offset_s, dur
                ));
            }
        }
        Ok(())
    }
}
