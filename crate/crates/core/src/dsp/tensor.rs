use super::{resample_to_target, CwtPlan, DspError, ScaleBank, TARGET_RATE_HZ, WINDOW_LEN};
use crate::ingest::Recording;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowLabel {
    Interictal,
    Preictal,
    Ictal,
    Unlabeled,
}

impl WindowLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            WindowLabel::Interictal => "interictal",
            WindowLabel::Preictal => "preictal",
            WindowLabel::Ictal => "ictal",
            WindowLabel::Unlabeled => "unlabeled",
        }
    }

    /// Preictal and ictal windows share the positive class.
    pub fn is_preictal_class(&self) -> bool {
        matches!(self, WindowLabel::Preictal | WindowLabel::Ictal)
    }
}

impl std::str::FromStr for WindowLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "interictal" => WindowLabel::Interictal,
            "preictal" => WindowLabel::Preictal,
            "ictal" => WindowLabel::Ictal,
            "unlabeled" => WindowLabel::Unlabeled,
            other => return Err(format!("unknown label {other:?}")),
        })
    }
}

/// Wavelet coefficients of one second of EEG: `channels × 128 × scales`,
/// stored row-major as `[channel][time][scale]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    pub values: Vec<f32>,
    pub channels: usize,
    pub scales: usize,
    /// Window start on the patient timeline, seconds.
    pub t_start_s: f64,
    pub label: WindowLabel,
    /// Id of the recording the window was cut from.
    pub source: Arc<str>,
}

impl WindowTensor {
    pub fn new(values: Vec<f32>, channels: usize, scales: usize) -> Result<Self, DspError> {
        if values.len() != channels * WINDOW_LEN * scales {
            return Err(DspError::ShapeMismatch(format!(
                "{} values for {channels} × {WINDOW_LEN} × {scales}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            channels,
            scales,
            t_start_s: 0.0,
            label: WindowLabel::Unlabeled,
            source: Arc::from(""),
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, WINDOW_LEN, self.scales)
    }

    pub fn with_label(mut self, label: WindowLabel) -> Self {
        self.label = label;
        self
    }
}

/// Cuts a 128 Hz recording into non-overlapping one-second tensors.
#[derive(Debug, Clone)]
pub struct Tensorizer {
    plan: CwtPlan,
}

impl Tensorizer {
    pub fn new(bank: &ScaleBank) -> Self {
        Self {
            plan: CwtPlan::new(bank),
        }
    }

    pub fn bank(&self) -> &ScaleBank {
        self.plan.bank()
    }

    /// Number of whole windows in a 128 Hz recording.
    pub fn window_count(rec: &Recording) -> usize {
        rec.n_samples() / WINDOW_LEN
    }

    /// Window count once `rec` is brought to 128 Hz, without resampling it.
    pub fn planned_window_count(rec: &Recording) -> Result<usize, DspError> {
        let (mut rate, mut n) = (rec.sample_rate_hz, rec.n_samples());
        while rate > TARGET_RATE_HZ {
            rate /= 2.0;
            n /= 2;
        }
        if rate != TARGET_RATE_HZ {
            return Err(DspError::UnsupportedRate(rec.sample_rate_hz));
        }
        Ok(n / WINDOW_LEN)
    }

    fn check(rec: &Recording) -> Result<(), DspError> {
        if rec.sample_rate_hz != TARGET_RATE_HZ {
            return Err(DspError::UnsupportedRate(rec.sample_rate_hz));
        }
        if rec.n_samples() < WINDOW_LEN {
            return Err(DspError::TooShort(rec.n_samples()));
        }
        Ok(())
    }

    /// Tensor for window `index` (unlabeled).
    pub fn window(&self, rec: &Recording, index: usize) -> Result<WindowTensor, DspError> {
        Self::check(rec)?;
        let source: Arc<str> = Arc::from(rec.id.as_str());
        self.window_with_source(rec, index, source)
    }

    fn window_with_source(
        &self,
        rec: &Recording,
        index: usize,
        source: Arc<str>,
    ) -> Result<WindowTensor, DspError> {
        if index >= Self::window_count(rec) {
            return Err(DspError::ShapeMismatch(format!(
                "window {index} past end of recording"
            )));
        }
        let ns = self.plan.bank().len();
        let per_channel = WINDOW_LEN * ns;
        let mut values = Vec::with_capacity(rec.n_channels() * per_channel);
        let mut coeffs = vec![0.0f64; per_channel];
        for row in &rec.samples {
            let w = &row[index * WINDOW_LEN..(index + 1) * WINDOW_LEN];
            self.plan.apply_into(w, &mut coeffs)?;
            values.extend(coeffs.iter().map(|&c| c as f32));
        }
        Ok(WindowTensor {
            values,
            channels: rec.n_channels(),
            scales: ns,
            t_start_s: rec.start_offset_s + index as f64,
            label: WindowLabel::Unlabeled,
            source,
        })
    }

    /// Lazily yields every window of a 128 Hz recording.
    pub fn windows<'a>(
        &'a self,
        rec: &'a Recording,
    ) -> Result<impl Iterator<Item = WindowTensor> + 'a, DspError> {
        Self::check(rec)?;
        let source: Arc<str> = Arc::from(rec.id.as_str());
        Ok((0..Self::window_count(rec)).map(move |i| {
            self.window_with_source(rec, i, source.clone())
                .expect("index and length checked")
        }))
    }

    /// Resamples to 128 Hz if needed, then yields every window.
    pub fn prepare(&self, rec: &Recording) -> Result<Recording, DspError> {
        let r = if rec.sample_rate_hz == TARGET_RATE_HZ {
            rec.clone()
        } else {
            resample_to_target(rec)?
        };
        Self::check(&r)?;
        Ok(r)
    }
}

/// All windows of a 128 Hz recording.
pub fn tensorize(rec: &Recording, bank: &ScaleBank) -> Result<Vec<WindowTensor>, DspError> {
    let t = Tensorizer::new(bank);
    let windows = t.windows(rec)?.collect();
    Ok(windows)
}
