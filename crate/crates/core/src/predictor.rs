//! Streaming inference: support-set scoring, score smoothing, decisions and
//! alarms.

use crate::dsp::{apply_norm, DspError, NormStats, ScaleBank, Tensorizer, WindowTensor};
use crate::ingest::Recording;
use crate::model::{classify_many, embed_many, similarity_to_many, ModelError, ModelParams};
use crate::segments::SupportSet;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PredictorError {
    #[error("support set is empty")]
    EmptySupport,
    #[error("time went from {prev} s to {t} s; windows must arrive in increasing order")]
    NonMonotonicTime { prev: f64, t: f64 },
    #[error("recording {0} also supplied support or training windows")]
    Leakage(String),
    #[error("invalid smoothing policy: {0}")]
    InvalidPolicy(String),
    #[error("malformed trace: {0}")]
    BadTrace(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingPolicy {
    /// Weight on the previous smoothed score.
    pub score_alpha: f64,
    /// Required margin of the smoothed preictal score over the interictal one.
    pub delta: f64,
    /// Weight on the previous decision average.
    pub decision_alpha: f64,
    pub alarm_threshold: f64,
    /// Minimum spacing between alarms.
    pub refractory_s: f64,
}

impl Default for SmoothingPolicy {
    fn default() -> Self {
        Self {
            score_alpha: 0.9,
            delta: 0.2,
            decision_alpha: 0.95,
            alarm_threshold: 0.8,
            refractory_s: 3600.0,
        }
    }
}

impl SmoothingPolicy {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.score_alpha) || !unit(self.decision_alpha) || !unit(self.alarm_threshold) {
            return Err(PredictorError::InvalidPolicy(
                "smoothing weights and alarm threshold must lie in (0, 1)".into(),
            ));
        }
        if !self.delta.is_finite() {
            return Err(PredictorError::InvalidPolicy(format!(
                "delta {}",
                self.delta
            )));
        }
        if !(self.refractory_s >= 0.0 && self.refractory_s.is_finite()) {
            return Err(PredictorError::InvalidPolicy(format!(
                "refractory {}",
                self.refractory_s
            )));
        }
        Ok(())
    }
}

/// One processed window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t_s: f64,
    pub s_p: f64,
    pub s_i: f64,
    pub smoothed_p: f64,
    pub smoothed_i: f64,
    pub decision: bool,
    pub ema: f64,
    pub alarm: bool,
}

/// Carried between windows; smoothed scores start neutral (0.5) and the
/// decision average at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub smoothed_p: f64,
    pub smoothed_i: f64,
    pub decision_ema: f64,
    pub last_alarm_t: Option<f64>,
    pub last_t: Option<f64>,
}

impl Default for PredictorState {
    fn default() -> Self {
        Self {
            smoothed_p: 0.5,
            smoothed_i: 0.5,
            decision_ema: 0.0,
            last_alarm_t: None,
            last_t: None,
        }
    }
}

impl PredictorState {
    fn advance_time(&mut self, t: f64) -> Result<(), PredictorError> {
        if let Some(prev) = self.last_t {
            if t.partial_cmp(&prev) != Some(std::cmp::Ordering::Greater) {
                return Err(PredictorError::NonMonotonicTime { prev, t });
            }
        }
        self.last_t = Some(t);
        Ok(())
    }

    fn decide(&mut self, policy: &SmoothingPolicy, decision: bool, t: f64) -> (f64, bool) {
        let a = policy.decision_alpha;
        self.decision_ema = a * self.decision_ema + (1.0 - a) * if decision { 1.0 } else { 0.0 };
        let clear = self
            .last_alarm_t
            .is_none_or(|last| t - last >= policy.refractory_s);
        let alarm = self.decision_ema >= policy.alarm_threshold && clear;
        if alarm {
            self.last_alarm_t = Some(t);
        }
        (self.decision_ema, alarm)
    }

    /// Smooths both scores, then decides on their difference.
    pub fn step(
        &mut self,
        policy: &SmoothingPolicy,
        s_p: f64,
        s_i: f64,
        t: f64,
    ) -> Result<TraceRecord, PredictorError> {
        self.advance_time(t)?;
        let a = policy.score_alpha;
        self.smoothed_p = a * self.smoothed_p + (1.0 - a) * s_p;
        self.smoothed_i = a * self.smoothed_i + (1.0 - a) * s_i;
        let decision = self.smoothed_p - self.smoothed_i > policy.delta;
        let (ema, alarm) = self.decide(policy, decision, t);
        Ok(TraceRecord {
            t_s: t,
            s_p,
            s_i,
            smoothed_p: self.smoothed_p,
            smoothed_i: self.smoothed_i,
            decision,
            ema,
            alarm,
        })
    }

    /// Classifier variant: smooths the preictal probability alone and decides
    /// on `smoothed > 0.5 + delta/2`, the same margin the two-score rule
    /// applies to `p` against `1 − p`.
    pub fn step_probability(
        &mut self,
        policy: &SmoothingPolicy,
        p: f64,
        t: f64,
    ) -> Result<TraceRecord, PredictorError> {
        self.advance_time(t)?;
        let a = policy.score_alpha;
        self.smoothed_p = a * self.smoothed_p + (1.0 - a) * p;
        self.smoothed_i = 1.0 - self.smoothed_p;
        let decision = self.smoothed_p > 0.5 + policy.delta / 2.0;
        let (ema, alarm) = self.decide(policy, decision, t);
        Ok(TraceRecord {
            t_s: t,
            s_p: p,
            s_i: 1.0 - p,
            smoothed_p: self.smoothed_p,
            smoothed_i: self.smoothed_i,
            decision,
            ema,
            alarm,
        })
    }
}

/// Per-window records of one replayed recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmTrace {
    pub recording_id: String,
    /// Recording start on the patient timeline; record times include it.
    pub start_offset_s: f64,
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "t_s,s_p,s_i,smoothed_p,smoothed_i,decision,ema,alarm";

impl AlarmTrace {
    pub fn new(recording_id: impl Into<String>, start_offset_s: f64) -> Self {
        Self {
            recording_id: recording_id.into(),
            start_offset_s,
            records: Vec::new(),
        }
    }

    pub fn alarms(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.alarm)
            .map(|r| r.t_s)
            .collect()
    }

    /// Covered time: one second per window.
    pub fn duration_s(&self) -> f64 {
        self.records.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# ictal-trace v1 recording={} start_offset_s={}\n{TRACE_HEADER}\n",
            self.recording_id, self.start_offset_s
        );
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.t_s,
                r.s_p,
                r.s_i,
                r.smoothed_p,
                r.smoothed_i,
                r.decision as u8,
                r.ema,
                r.alarm as u8
            ));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self, PredictorError> {
        let bad = |m: String| PredictorError::BadTrace(m);
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let rest = head
            .strip_prefix("# ictal-trace v1 ")
            .ok_or_else(|| bad("missing version line".into()))?;
        let mut id = None;
        let mut offset = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("recording", v)) => id = Some(v.to_string()),
                Some(("start_offset_s", v)) => offset = v.parse::<f64>().ok(),
                _ => return Err(bad(format!("unknown header field {field:?}"))),
            }
        }
        let mut trace = Self::new(
            id.ok_or_else(|| bad("missing recording id".into()))?,
            offset.ok_or_else(|| bad("missing start offset".into()))?,
        );
        if lines.next() != Some(TRACE_HEADER) {
            return Err(bad("missing column header".into()));
        }
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("row {}: {} fields", n + 1, f.len())));
            }
            let num = |i: usize| -> Result<f64, PredictorError> {
                f[i].parse()
                    .map_err(|_| bad(format!("row {}: bad number {:?}", n + 1, f[i])))
            };
            let flag = |i: usize| -> Result<bool, PredictorError> {
                match f[i] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(bad(format!("row {}: bad flag {other:?}", n + 1))),
                }
            };
            trace.records.push(TraceRecord {
                t_s: num(0)?,
                s_p: num(1)?,
                s_i: num(2)?,
                smoothed_p: num(3)?,
                smoothed_i: num(4)?,
                decision: flag(5)?,
                ema: num(6)?,
                alarm: flag(7)?,
            });
        }
        Ok(trace)
    }
}

/// Feeds `(t, s_p, s_i)` triples through `state`.
pub fn run_stream(
    state: &mut PredictorState,
    policy: &SmoothingPolicy,
    scores: &[(f64, f64, f64)],
) -> Result<Vec<TraceRecord>, PredictorError> {
    scores
        .iter()
        .map(|&(t, p, i)| state.step(policy, p, i, t))
        .collect()
}

/// Support-set embeddings computed once and reused for every window.
pub struct SupportScorer<'a> {
    params: &'a ModelParams,
    preictal: Vec<Vec<f32>>,
    interictal: Vec<Vec<f32>>,
}

impl<'a> SupportScorer<'a> {
    pub fn new(params: &'a ModelParams, support: &SupportSet) -> Result<Self, PredictorError> {
        if support.preictal.is_empty() || support.interictal.is_empty() {
            return Err(PredictorError::EmptySupport);
        }
        let embed = |ws: &[std::sync::Arc<WindowTensor>]| {
            let xs: Vec<&[f32]> = ws.iter().map(|w| w.values.as_slice()).collect();
            embed_many(params, &xs)
        };
        Ok(Self {
            params,
            preictal: embed(&support.preictal)?,
            interictal: embed(&support.interictal)?,
        })
    }

    /// Mean similarity to the preictal and to the interictal examples.
    pub fn score_embedding(&self, e: &[f32]) -> Result<(f64, f64), PredictorError> {
        let mean = |v: Vec<f32>| v.iter().map(|&s| s as f64).sum::<f64>() / v.len() as f64;
        let s_p = mean(similarity_to_many(self.params, e, &self.preictal)?);
        let s_i = mean(similarity_to_many(self.params, e, &self.interictal)?);
        Ok((s_p, s_i))
    }
}

/// `(S_P, S_I)` for one normalized window.
pub fn score_window(
    params: &ModelParams,
    support: &SupportSet,
    x: &WindowTensor,
) -> Result<(f64, f64), PredictorError> {
    let scorer = SupportScorer::new(params, support)?;
    let e = embed_many(params, &[x.values.as_slice()])?;
    scorer.score_embedding(&e[0])
}

/// Windows per embedding batch during replay.
const REPLAY_CHUNK: usize = 64;

/// Tensorizes, normalizes and feeds `rec` through `on_chunk` in time order.
fn for_each_chunk(
    rec: &Recording,
    norm: &NormStats,
    bank: &ScaleBank,
    mut on_chunk: impl FnMut(&[WindowTensor]) -> Result<(), PredictorError>,
) -> Result<(), PredictorError> {
    let tz = Tensorizer::new(bank);
    let prepared = tz.prepare(rec)?;
    let mut buf = Vec::with_capacity(REPLAY_CHUNK);
    for w in tz.windows(&prepared)? {
        buf.push(apply_norm(&w, norm));
        if buf.len() == REPLAY_CHUNK {
            on_chunk(&buf)?;
            buf.clear();
        }
    }
    if !buf.is_empty() {
        on_chunk(&buf)?;
    }
    Ok(())
}

/// Scores every window of `rec` against the support set and runs the alarm
/// machinery. Support windows must already be normalized with `norm`.
pub fn replay(
    rec: &Recording,
    params: &ModelParams,
    support: &SupportSet,
    policy: &SmoothingPolicy,
    norm: &NormStats,
    bank: &ScaleBank,
) -> Result<AlarmTrace, PredictorError> {
    policy.validate()?;
    if support.sources().contains(&rec.id) {
        return Err(PredictorError::Leakage(rec.id.clone()));
    }
    let scorer = SupportScorer::new(params, support)?;
    let mut state = PredictorState::default();
    let mut trace = AlarmTrace::new(&rec.id, rec.start_offset_s);
    for_each_chunk(rec, norm, bank, |chunk| {
        let xs: Vec<&[f32]> = chunk.iter().map(|w| w.values.as_slice()).collect();
        for (w, e) in chunk.iter().zip(embed_many(params, &xs)?) {
            let (s_p, s_i) = scorer.score_embedding(&e)?;
            trace
                .records
                .push(state.step(policy, s_p, s_i, w.t_start_s)?);
        }
        Ok(())
    })?;
    Ok(trace)
}

/// Plain-classifier replay: the preictal probability drives the same alarm
/// machinery.
pub fn replay_classifier(
    rec: &Recording,
    params: &ModelParams,
    policy: &SmoothingPolicy,
    norm: &NormStats,
    bank: &ScaleBank,
) -> Result<AlarmTrace, PredictorError> {
    policy.validate()?;
    let mut state = PredictorState::default();
    let mut trace = AlarmTrace::new(&rec.id, rec.start_offset_s);
    for_each_chunk(rec, norm, bank, |chunk| {
        let xs: Vec<&[f32]> = chunk.iter().map(|w| w.values.as_slice()).collect();
        for (w, p) in chunk.iter().zip(classify_many(params, &xs)?) {
            trace
                .records
                .push(state.step_probability(policy, p as f64, w.t_start_s)?);
        }
        Ok(())
    })?;
    Ok(trace)
}

/// Re-runs the alarm machinery of a finished trace under another policy,
/// reusing its raw scores.
pub fn rescore(trace: &AlarmTrace, policy: &SmoothingPolicy) -> Result<AlarmTrace, PredictorError> {
    policy.validate()?;
    let mut state = PredictorState::default();
    let mut out = AlarmTrace::new(&trace.recording_id, trace.start_offset_s);
    for r in &trace.records {
        out.records.push(state.step(policy, r.s_p, r.s_i, r.t_s)?);
    }
    Ok(out)
}
