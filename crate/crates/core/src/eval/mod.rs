//! Alarm scoring against ground truth, prediction metrics, reports and the
//! training/evaluation harnesses.

mod harness;

pub use harness::{
    fine_tune_one_seizure, leave_one_out, loo_folds, run_method_a_loo, run_method_b,
    train_method_a, train_siamese, Fold, FoldResult, MethodAModel, MethodASetup, MethodBSetup,
    SiameseModel, SiameseSetup,
};

use crate::ingest::SeizureAnnotations;
use crate::model::ModelError;
use crate::predictor::{rescore, AlarmTrace, PredictorError, SmoothingPolicy};
use crate::segments::SegmentError;
use num_rational::Ratio;
use num_traits::ToPrimitive;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("time base mismatch: {0}")]
    TimeBaseMismatch(String),
    #[error("sensitivity needs at least one seizure")]
    ZeroSeizures,
    #[error("false prediction rate needs a positive number of hours")]
    ZeroHours,
    #[error("leave-one-out needs at least 2 seizures, got {0}")]
    TooFewSeizures(usize),
    #[error("fold {fold}: recording {id} is used for both training and testing")]
    Leakage { fold: usize, id: String },
    #[error("invalid evaluation options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub horizon_minutes: f64,
    /// Alarms this long after a seizure ends are not counted as false; 0
    /// disables the exclusion.
    pub postictal_minutes: f64,
    /// Alarms closer than this to the previous kept alarm are pooled into it.
    pub refractory_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            horizon_minutes: 60.0,
            postictal_minutes: 30.0,
            refractory_s: 3600.0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(self.horizon_minutes > 0.0 && ok(self.horizon_minutes)) {
            return Err(EvalError::InvalidOptions(format!(
                "horizon {} min",
                self.horizon_minutes
            )));
        }
        if !ok(self.postictal_minutes) || !ok(self.refractory_s) {
            return Err(EvalError::InvalidOptions(
                "negative post-ictal or refractory time".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one trace against its annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlarmScore {
    /// One flag per annotated seizure, in onset order.
    pub predicted: Vec<bool>,
    pub false_alarms: usize,
    /// Trace duration minus ictal time.
    pub hours: f64,
}

/// Keeps an alarm only if it comes at least `refractory_s` after the
/// previously kept one.
pub fn pool_alarms(alarms: &[f64], refractory_s: f64) -> Vec<f64> {
    let mut kept: Vec<f64> = Vec::with_capacity(alarms.len());
    for &t in alarms {
        if kept.last().is_none_or(|&last| t - last >= refractory_s) {
            kept.push(t);
        }
    }
    kept
}

/// Scores alarm times against seizures on the same (patient) time base.
///
/// A seizure counts as predicted when an alarm falls in
/// `(onset − horizon, onset]`. An alarm is false when no onset follows it
/// within the horizon, unless it falls inside a seizure or its post-ictal
/// exclusion.
pub fn score_alarm_times(
    alarms: &[f64],
    span: (f64, f64),
    onsets_offsets: &[(f64, f64)],
    opts: &EvalOptions,
) -> Result<AlarmScore, EvalError> {
    opts.validate()?;
    let (start, end) = span;
    if end.partial_cmp(&start).is_none_or(|o| o.is_lt()) {
        return Err(EvalError::TimeBaseMismatch(format!(
            "span ({start}, {end})"
        )));
    }
    for &(on, off) in onsets_offsets {
        if on < start || off > end + 1e-6 {
            return Err(EvalError::TimeBaseMismatch(format!(
                "seizure ({on}, {off}) outside trace span ({start}, {end})"
            )));
        }
    }
    if let Some(&t) = alarms.iter().find(|&&t| t < start || t > end) {
        return Err(EvalError::TimeBaseMismatch(format!(
            "alarm at {t} outside ({start}, {end})"
        )));
    }
    let h = opts.horizon_minutes * 60.0;
    let post = opts.postictal_minutes * 60.0;
    let alarms = pool_alarms(alarms, opts.refractory_s);
    let predicted = onsets_offsets
        .iter()
        .map(|&(on, _)| alarms.iter().any(|&t| t > on - h && t <= on))
        .collect();
    let false_alarms = alarms
        .iter()
        .filter(|&&t| {
            let warns = onsets_offsets.iter().any(|&(on, _)| on >= t && on < t + h);
            let excluded = onsets_offsets
                .iter()
                .any(|&(on, off)| t > on && t < off + post);
            !warns && !excluded
        })
        .count();
    let ictal: f64 = onsets_offsets
        .iter()
        .map(|&(on, off)| off.min(end) - on.max(start))
        .sum();
    Ok(AlarmScore {
        predicted,
        false_alarms,
        hours: ((end - start) - ictal).max(0.0) / 3600.0,
    })
}

/// Scores a replayed trace against the annotations of its recording
/// (relative to the recording start).
pub fn score_alarms(
    trace: &AlarmTrace,
    truth: &SeizureAnnotations,
    opts: &EvalOptions,
) -> Result<AlarmScore, EvalError> {
    let start = trace.start_offset_s;
    let seizures: Vec<(f64, f64)> = truth
        .events()
        .iter()
        .map(|e| (e.onset_s + start, e.offset_s + start))
        .collect();
    if let Some(first) = trace.records.first() {
        if first.t_s < start {
            return Err(EvalError::TimeBaseMismatch(format!(
                "first window at {} s precedes recording start {start} s",
                first.t_s
            )));
        }
    }
    score_alarm_times(
        &trace.alarms(),
        (start, start + trace.duration_s()),
        &seizures,
        opts,
    )
}

/// `100 · predicted / seizures`, exact.
pub fn sensitivity(n_predicted: u64, n_seizures: u64) -> Result<Ratio<u64>, EvalError> {
    if n_seizures == 0 {
        return Err(EvalError::ZeroSeizures);
    }
    Ok(Ratio::new(100 * n_predicted, n_seizures))
}

/// One decimal, truncated toward zero (93.877… prints as 93.8).
pub fn format_truncated(pct: Ratio<u64>) -> String {
    let tenths = (pct * 10u64).to_integer();
    format!("{}.{}", tenths / 10, tenths % 10)
}

pub fn fpr_per_hour(false_alarms: usize, hours: f64) -> Result<f64, EvalError> {
    if !(hours > 0.0 && hours.is_finite()) {
        return Err(EvalError::ZeroHours);
    }
    Ok(false_alarms as f64 / hours)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub patient: String,
    /// Patient the model was trained on, for transferred models.
    pub source: Option<String>,
    pub seizures: u64,
    pub predicted: u64,
    pub false_alarms: usize,
    pub hours: f64,
}

impl EvalRow {
    pub fn new(patient: impl Into<String>) -> Self {
        Self {
            patient: patient.into(),
            source: None,
            seizures: 0,
            predicted: 0,
            false_alarms: 0,
            hours: 0.0,
        }
    }

    pub fn add(&mut self, s: &AlarmScore) {
        self.seizures += s.predicted.len() as u64;
        self.predicted += s.predicted.iter().filter(|&&p| p).count() as u64;
        self.false_alarms += s.false_alarms;
        self.hours += s.hours;
    }

    pub fn sensitivity(&self) -> Option<Ratio<u64>> {
        sensitivity(self.predicted, self.seizures).ok()
    }

    pub fn fpr(&self) -> Option<f64> {
        fpr_per_hour(self.false_alarms, self.hours).ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Sum of the rows, recomputed on every call.
    pub fn aggregate(&self) -> EvalRow {
        let mut all = EvalRow::new("all");
        for r in &self.rows {
            all.seizures += r.seizures;
            all.predicted += r.predicted;
            all.false_alarms += r.false_alarms;
            all.hours += r.hours;
        }
        all
    }
}

pub const REPORT_VERSION_LINE: &str = "# ictal-report v1";
pub const REPORT_CSV_HEADER: &str = "patient,seizures,predicted,sensitivity_pct,fpr_per_hour,hours";
const TEXT_HEADER: &str = "patient | seizures | predicted | sensitivity | fpr/h";

fn text_row(r: &EvalRow) -> String {
    let sens = r.sensitivity().map_or("-".to_string(), format_truncated);
    let fpr = r.fpr().map_or("-".to_string(), |f| format!("{f:.3}"));
    let name = match &r.source {
        Some(src) => format!("{} (from {src})", r.patient),
        None => r.patient.clone(),
    };
    format!("{name} | {} | {} | {sens} | {fpr}", r.seizures, r.predicted)
}

fn csv_row(r: &EvalRow) -> String {
    let sens = r.sensitivity().map_or(String::new(), |s| {
        format!("{:.4}", s.to_f64().unwrap_or(f64::NAN))
    });
    let fpr = r.fpr().map_or(String::new(), |f| format!("{f:.6}"));
    format!(
        "{},{},{},{sens},{fpr},{:.6}",
        r.patient, r.seizures, r.predicted, r.hours
    )
}

/// Table text and CSV. The aggregate row is appended when there is at
/// least one patient row.
pub fn render_report(report: &EvalReport) -> (String, String) {
    let mut text = format!("{REPORT_VERSION_LINE}\n{TEXT_HEADER}\n");
    let mut csv = format!("{REPORT_VERSION_LINE}\n{REPORT_CSV_HEADER}\n");
    for r in &report.rows {
        text.push_str(&text_row(r));
        text.push('\n');
        csv.push_str(&csv_row(r));
        csv.push('\n');
    }
    if !report.rows.is_empty() {
        let all = report.aggregate();
        text.push_str(&text_row(&all));
        text.push('\n');
        csv.push_str(&csv_row(&all));
        csv.push('\n');
    }
    (text, csv)
}

/// One cell of a threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub delta: f64,
    pub alarm_threshold: f64,
    pub row: EvalRow,
}

/// Re-scores already replayed traces over a grid of margins and alarm
/// thresholds, for choosing a policy on validation seizures.
pub fn sweep_thresholds(
    traces: &[(AlarmTrace, SeizureAnnotations)],
    base: &SmoothingPolicy,
    deltas: &[f64],
    thresholds: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<SweepPoint>, EvalError> {
    let mut out = Vec::with_capacity(deltas.len() * thresholds.len());
    for &delta in deltas {
        for &alarm_threshold in thresholds {
            let policy = SmoothingPolicy {
                delta,
                alarm_threshold,
                ..base.clone()
            };
            let mut row = EvalRow::new("sweep");
            for (trace, truth) in traces {
                row.add(&score_alarms(&rescore(trace, &policy)?, truth, opts)?);
            }
            out.push(SweepPoint {
                delta,
                alarm_threshold,
                row,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SeizureEvent;
    use proptest::prelude::*;

    fn opts() -> EvalOptions {
        EvalOptions::default()
    }

    #[test]
    fn horizon_rule() {
        let s = score_alarm_times(&[1000.0], (0.0, 5000.0), &[(2800.0, 2840.0)], &opts()).unwrap();
        assert_eq!(s.predicted, vec![true]);
        assert_eq!(s.false_alarms, 0);

        let s = score_alarm_times(&[1000.0], (0.0, 6000.0), &[(4601.0, 4650.0)], &opts()).unwrap();
        assert_eq!((s.predicted, s.false_alarms), (vec![false], 1));

        let s = score_alarm_times(&[], (0.0, 5000.0), &[(2800.0, 2840.0)], &opts()).unwrap();
        assert_eq!((s.predicted, s.false_alarms), (vec![false], 0));
    }

    #[test]
    fn alarm_at_onset_counts_and_after_onset_does_not() {
        let s = score_alarm_times(&[2800.0], (0.0, 5000.0), &[(2800.0, 2840.0)], &opts()).unwrap();
        assert_eq!(s.predicted, vec![true]);
        let s = score_alarm_times(&[2801.0], (0.0, 5000.0), &[(2800.0, 2840.0)], &opts()).unwrap();
        assert_eq!((s.predicted, s.false_alarms), (vec![false], 0));
    }

    #[test]
    fn postictal_exclusion_is_configurable() {
        let seizure = [(1000.0, 1040.0)];
        let s = score_alarm_times(&[1040.0 + 600.0], (0.0, 9000.0), &seizure, &opts()).unwrap();
        assert_eq!(s.false_alarms, 0);
        let off = EvalOptions {
            postictal_minutes: 0.0,
            ..opts()
        };
        let s = score_alarm_times(&[1040.0 + 600.0], (0.0, 9000.0), &seizure, &off).unwrap();
        assert_eq!(s.false_alarms, 1);
    }

    #[test]
    fn hours_exclude_ictal_time() {
        let s = score_alarm_times(&[], (0.0, 7200.0), &[(100.0, 460.0)], &opts()).unwrap();
        assert!((s.hours - 1.9).abs() < 1e-12);
    }

    #[test]
    fn time_base_checks() {
        assert!(matches!(
            score_alarm_times(&[], (0.0, 100.0), &[(200.0, 240.0)], &opts()),
            Err(EvalError::TimeBaseMismatch(_))
        ));
        assert!(matches!(
            score_alarm_times(&[150.0], (0.0, 100.0), &[], &opts()),
            Err(EvalError::TimeBaseMismatch(_))
        ));
    }

    #[test]
    fn trace_scoring_uses_recording_offset() {
        let mut trace = AlarmTrace::new("r", 10_000.0);
        let mut st = crate::predictor::PredictorState::default();
        let policy = SmoothingPolicy::default();
        for i in 0..3000 {
            let hot = (1000..1200).contains(&i);
            let (p, q) = if hot { (1.0, 0.0) } else { (0.0, 1.0) };
            trace
                .records
                .push(st.step(&policy, p, q, 10_000.0 + i as f64).unwrap());
        }
        let truth = SeizureAnnotations::new(vec![SeizureEvent {
            onset_s: 2000.0,
            offset_s: 2050.0,
        }])
        .unwrap();
        let s = score_alarms(&trace, &truth, &opts()).unwrap();
        assert_eq!((s.predicted, s.false_alarms), (vec![true], 0));
    }

    #[test]
    fn sensitivity_matches_table_values() {
        assert_eq!(format_truncated(sensitivity(46, 49).unwrap()), "93.8");
        assert_eq!(format_truncated(sensitivity(42, 49).unwrap()), "85.7");
        assert_eq!(format_truncated(sensitivity(7, 7).unwrap()), "100.0");
        assert_eq!(format_truncated(sensitivity(0, 3).unwrap()), "0.0");
        assert_eq!(sensitivity(1, 0), Err(EvalError::ZeroSeizures));
        // plain rounding would give 93.9
        assert_eq!(format!("{:.1}", 4600.0 / 49.0), "93.9");
    }

    #[test]
    fn false_prediction_rate() {
        assert!((fpr_per_hour(0, 24.0).unwrap()).abs() < 1e-15);
        assert!((0.05 * 24.0 - 1.2f64).abs() < 1e-12);
        assert_eq!(fpr_per_hour(3, 0.0), Err(EvalError::ZeroHours));
        assert_eq!(fpr_per_hour(6, 12.0).unwrap(), 0.5);
    }

    #[test]
    fn report_rendering() {
        let (text, csv) = render_report(&EvalReport::default());
        assert_eq!(text.lines().count(), 2);
        assert_eq!(csv, format!("{REPORT_VERSION_LINE}\n{REPORT_CSV_HEADER}\n"));

        let mut row = EvalRow::new("p1");
        row.seizures = 7;
        row.predicted = 7;
        row.hours = 12.0;
        let (text, csv) = render_report(&EvalReport { rows: vec![row] });
        assert!(
            text.lines()
                .nth(2)
                .unwrap()
                .ends_with("7 | 7 | 100.0 | 0.000"),
            "{text}"
        );
        assert_eq!(
            csv.lines().nth(2).unwrap(),
            "p1,7,7,100.0000,0.000000,12.000000"
        );
        assert!(csv.lines().nth(3).unwrap().starts_with("all,7,7,"));
    }

    #[test]
    fn aggregate_is_rederived() {
        let mk = |p: &str, s, k| EvalRow {
            patient: p.into(),
            source: None,
            seizures: s,
            predicted: k,
            false_alarms: 1,
            hours: 10.0,
        };
        let rep = EvalReport {
            rows: vec![mk("a", 20, 19), mk("b", 29, 27)],
        };
        let all = rep.aggregate();
        assert_eq!((all.seizures, all.predicted, all.false_alarms), (49, 46, 2));
        assert_eq!(format_truncated(all.sensitivity().unwrap()), "93.8");
        assert!(render_report(&rep)
            .0
            .lines()
            .last()
            .unwrap()
            .starts_with("all | 49 | 46 | 93.8"));
    }

    #[test]
    fn sweep_covers_the_grid() {
        let mut trace = AlarmTrace::new("r", 0.0);
        let mut st = crate::predictor::PredictorState::default();
        for i in 0..4000 {
            let p = if (2000..2600).contains(&i) { 0.9 } else { 0.2 };
            trace.records.push(
                st.step(&SmoothingPolicy::default(), p, 0.3, i as f64)
                    .unwrap(),
            );
        }
        let truth = SeizureAnnotations::new(vec![SeizureEvent {
            onset_s: 2700.0,
            offset_s: 2750.0,
        }])
        .unwrap();
        let pts = sweep_thresholds(
            &[(trace, truth)],
            &SmoothingPolicy::default(),
            &[0.1, 0.2, 0.8],
            &[0.5, 0.8],
            &opts(),
        )
        .unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].row.predicted, 1);
        assert!(pts
            .iter()
            .filter(|p| p.delta == 0.8)
            .all(|p| p.row.predicted == 0));
    }

    proptest! {
        #[test]
        fn complementary_sensitivities_sum_to_100(n in 1u64..500, x in 0u64..500) {
            let x = x % (n + 1);
            let total = sensitivity(x, n).unwrap() + sensitivity(n - x, n).unwrap();
            prop_assert_eq!(total, Ratio::from_integer(100));
        }

        #[test]
        fn pooling_is_idempotent_for_scoring(
            mut alarms in prop::collection::vec(0.0f64..50_000.0, 0..30),
            onsets in prop::collection::vec(0.0f64..49_000.0, 0..4),
        ) {
            alarms.sort_by(f64::total_cmp);
            let mut onsets = onsets;
            onsets.sort_by(f64::total_cmp);
            onsets.dedup_by(|a, b| *a - *b < 200.0);
            let seizures: Vec<(f64, f64)> = onsets.iter().map(|&o| (o, o + 60.0)).collect();
            let o = opts();
            let raw = score_alarm_times(&alarms, (0.0, 50_000.0), &seizures, &o).unwrap();
            let pooled = score_alarm_times(&pool_alarms(&alarms, o.refractory_s), (0.0, 50_000.0), &seizures, &o).unwrap();
            prop_assert_eq!(raw, pooled);
        }
    }
}
