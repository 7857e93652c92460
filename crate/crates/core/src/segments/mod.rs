//! Offline replay of the online collection loop: interictal and preictal
//! segment stores, labeled windows, pairs, splits and support sets.

mod pairs;

pub use pairs::{
    make_pairs, read_support, select_support, split_train_val, write_support, PairExample,
    SupportSet, SUPPORT_MAGIC,
};

use crate::dsp::{
    apply_norm, DspError, NormStats, ScaleBank, Tensorizer, WindowLabel, WindowTensor,
};
use crate::ingest::Recording;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SegmentError {
    #[error("no seizure has {0} h of usable recording before it")]
    NoQualifyingSeizure(f64),
    #[error("invalid collection config: {0}")]
    InvalidConfig(String),
    #[error("recordings overlap or are out of order: {0}")]
    TimelineOrder(String),
    #[error("need at least {needed} items, found {available}")]
    TooFew { needed: usize, available: usize },
    #[error("pair count must be even, got {0}")]
    OddPairCount(usize),
    #[error("{stratum} pairs: requested {requested}, only {available} distinct")]
    Exhausted {
        stratum: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("support file: {0}")]
    BadSupportFile(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionConfig {
    /// Length of each collected segment.
    pub t_minutes: f64,
    /// Required interictal distance from an onset.
    pub m_hours: f64,
    /// Seconds after onset appended to the preictal store.
    pub include_ictal_tail_s: f64,
    pub prediction_horizon_minutes: f64,
    /// Preictal length for the plain-classifier labeling.
    pub method_a_preictal_minutes: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            t_minutes: 10.0,
            m_hours: 4.0,
            include_ictal_tail_s: 0.0,
            prediction_horizon_minutes: 60.0,
            method_a_preictal_minutes: 15.0,
        }
    }
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: String| Err(SegmentError::InvalidConfig(m));
        if !(self.t_minutes > 0.0 && self.t_minutes <= 60.0) {
            return bad(format!("t_minutes {} outside (0, 60]", self.t_minutes));
        }
        if !(self.m_hours >= 1.0 && self.m_hours.is_finite()) {
            return bad(format!("m_hours {} below 1", self.m_hours));
        }
        if !(self.include_ictal_tail_s >= 0.0 && self.include_ictal_tail_s.is_finite()) {
            return bad(format!("negative ictal tail {}", self.include_ictal_tail_s));
        }
        if !(self.prediction_horizon_minutes >= self.t_minutes
            && self.prediction_horizon_minutes.is_finite())
        {
            return bad(format!(
                "horizon {} min shorter than t {} min",
                self.prediction_horizon_minutes, self.t_minutes
            ));
        }
        if !(self.method_a_preictal_minutes > 0.0 && self.method_a_preictal_minutes.is_finite()) {
            return bad(format!(
                "preictal length {}",
                self.method_a_preictal_minutes
            ));
        }
        Ok(())
    }

    fn segment_windows(&self) -> usize {
        (self.t_minutes * 60.0).round() as usize
    }
}

/// Windows collected for one seizure.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStore {
    pub interictal: Vec<Arc<WindowTensor>>,
    /// Preictal windows, plus ictal ones when a tail is configured.
    pub preictal: Vec<Arc<WindowTensor>>,
    /// Recording id and onset (patient timeline) of the anchoring seizure.
    pub source_seizure: (String, f64),
}

impl SegmentStore {
    /// Recording ids contributing windows.
    pub fn sources(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .interictal
            .iter()
            .chain(&self.preictal)
            .map(|w| w.source.to_string())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn windows(&self) -> impl Iterator<Item = &WindowTensor> + Clone {
        self.interictal.iter().chain(&self.preictal).map(|w| &**w)
    }

    /// Copy with every window z-scored.
    pub fn normalized(&self, stats: &NormStats) -> Self {
        let norm =
            |v: &[Arc<WindowTensor>]| v.iter().map(|w| Arc::new(apply_norm(w, stats))).collect();
        Self {
            interictal: norm(&self.interictal),
            preictal: norm(&self.preictal),
            source_seizure: self.source_seizure.clone(),
        }
    }

    /// One line per window: recording id, start time, label.
    pub fn manifest(&self) -> String {
        let mut s = format!(
            "# ictal-segments v1\n# seizure {} {}\n",
            self.source_seizure.0, self.source_seizure.1
        );
        for w in self.windows() {
            s.push_str(&format!(
                "{} {} {}\n",
                w.source,
                w.t_start_s,
                w.label.as_str()
            ));
        }
        s
    }
}

/// Where window `index` of recording `rec` sits on the patient timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    rec: usize,
    index: usize,
    t_start: f64,
}

/// Every window position across a time-ordered set of recordings.
struct Timeline<'a> {
    recs: &'a [Recording],
    slots: Vec<Slot>,
    /// (absolute onset, absolute offset, recording index), sorted.
    seizures: Vec<(f64, f64, usize)>,
}

impl<'a> Timeline<'a> {
    fn new(recs: &'a [Recording]) -> Result<Self, SegmentError> {
        let mut slots = Vec::new();
        let mut seizures = Vec::new();
        let mut prev_end = f64::NEG_INFINITY;
        for (r, rec) in recs.iter().enumerate() {
            if rec.start_offset_s < prev_end {
                return Err(SegmentError::TimelineOrder(format!(
                    "{} starts at {} s, before the previous recording ends at {prev_end} s",
                    rec.id, rec.start_offset_s
                )));
            }
            prev_end = rec.start_offset_s + rec.duration_s();
            let n = Tensorizer::planned_window_count(rec)?;
            slots.extend((0..n).map(|index| Slot {
                rec: r,
                index,
                t_start: rec.start_offset_s + index as f64,
            }));
            for e in rec.annotations.events() {
                seizures.push((
                    e.onset_s + rec.start_offset_s,
                    e.offset_s + rec.start_offset_s,
                    r,
                ));
            }
        }
        seizures.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            recs,
            slots,
            seizures,
        })
    }

    /// Tensorizes the picked slots, resampling each recording at most once.
    fn gather(
        &self,
        picks: &[(Slot, WindowLabel)],
        bank: &ScaleBank,
    ) -> Result<Vec<WindowTensor>, SegmentError> {
        let tz = Tensorizer::new(bank);
        let mut by_rec: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (slot, _)) in picks.iter().enumerate() {
            by_rec.entry(slot.rec).or_default().push(i);
        }
        let mut out: Vec<Option<WindowTensor>> = vec![None; picks.len()];
        for (r, idx) in by_rec {
            let prepared = tz.prepare(&self.recs[r])?;
            for i in idx {
                let (slot, label) = picks[i];
                out[i] = Some(tz.window(&prepared, slot.index)?.with_label(label));
            }
        }
        Ok(out
            .into_iter()
            .map(|w| w.expect("every pick filled"))
            .collect())
    }
}

/// Replays the collection loop over a patient's recordings.
///
/// Starting at the beginning of the timeline, the first `t` minutes of
/// recorded EEG are held as an interictal candidate ending at `t1`. At the
/// next onset `t2` the candidate is kept iff `t2 − t1 > m` hours; the
/// preictal store is then the `t` minutes before that onset (plus any ictal
/// tail). Otherwise collection restarts after the seizure ends.
pub fn collect_segments(
    recs: &[Recording],
    cfg: &CollectionConfig,
    bank: &ScaleBank,
) -> Result<SegmentStore, SegmentError> {
    cfg.validate()?;
    let tl = Timeline::new(recs)?;
    let want = cfg.segment_windows();
    let m_s = cfg.m_hours * 3600.0;
    let mut cursor = f64::NEG_INFINITY;
    for &(onset, offset, r) in &tl.seizures {
        let candidate: Vec<Slot> = tl
            .slots
            .iter()
            .filter(|s| s.t_start >= cursor && s.t_start + 1.0 <= onset)
            .take(want)
            .copied()
            .collect();
        let accepted = candidate.len() == want && onset - (candidate[want - 1].t_start + 1.0) > m_s;
        if !accepted {
            cursor = cursor.max(offset);
            continue;
        }
        let lo = onset - cfg.t_minutes * 60.0;
        let hi = onset + cfg.include_ictal_tail_s;
        let preictal: Vec<Slot> = tl
            .slots
            .iter()
            .filter(|s| s.t_start >= lo && s.t_start + 1.0 <= hi)
            .copied()
            .collect();
        if preictal.is_empty() {
            cursor = cursor.max(offset);
            continue;
        }
        // Balance: the earliest interictal and the latest preictal windows.
        let n = candidate.len().min(preictal.len());
        let mut picks: Vec<(Slot, WindowLabel)> = candidate[..n]
            .iter()
            .map(|&s| (s, WindowLabel::Interictal))
            .collect();
        picks.extend(preictal[preictal.len() - n..].iter().map(|&s| {
            let label = if s.t_start < onset {
                WindowLabel::Preictal
            } else {
                WindowLabel::Ictal
            };
            (s, label)
        }));
        let mut windows = tl.gather(&picks, bank)?.into_iter().map(Arc::new);
        let interictal = windows.by_ref().take(n).collect();
        let preictal = windows.collect();
        return Ok(SegmentStore {
            interictal,
            preictal,
            source_seizure: (recs[r].id.clone(), onset),
        });
    }
    Err(SegmentError::NoQualifyingSeizure(cfg.m_hours))
}

/// Windows for the plain classifier: the preictal minutes before every
/// onset, and interictal windows at least `m` hours from every onset,
/// with the larger class under-sampled (seeded, uniform) to match.
pub fn label_windows_method_a(
    recs: &[Recording],
    cfg: &CollectionConfig,
    bank: &ScaleBank,
    seed: u64,
) -> Result<Vec<WindowTensor>, SegmentError> {
    cfg.validate()?;
    let tl = Timeline::new(recs)?;
    if tl.seizures.is_empty() {
        return Err(SegmentError::NoQualifyingSeizure(cfg.m_hours));
    }
    let pre_s = cfg.method_a_preictal_minutes * 60.0;
    let m_s = cfg.m_hours * 3600.0;
    let mut preictal = Vec::new();
    let mut interictal = Vec::new();
    for s in &tl.slots {
        let (a, b) = (s.t_start, s.t_start + 1.0);
        if tl
            .seizures
            .iter()
            .any(|&(on, _, _)| a >= on - pre_s && b <= on)
        {
            preictal.push(*s);
        } else if tl
            .seizures
            .iter()
            .all(|&(on, _, _)| b <= on - m_s || a >= on + m_s)
        {
            interictal.push(*s);
        }
    }
    if preictal.is_empty() || interictal.is_empty() {
        return Err(SegmentError::NoQualifyingSeizure(cfg.m_hours));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut undersample = |v: Vec<Slot>, keep: usize| -> Vec<Slot> {
        if v.len() <= keep {
            return v;
        }
        let mut idx = rand::seq::index::sample(&mut rng, v.len(), keep).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| v[i]).collect()
    };
    let n = preictal.len().min(interictal.len());
    let interictal = undersample(interictal, n);
    let preictal = undersample(preictal, n);
    let mut picks: Vec<(Slot, WindowLabel)> = interictal
        .into_iter()
        .map(|s| (s, WindowLabel::Interictal))
        .collect();
    picks.extend(preictal.into_iter().map(|s| (s, WindowLabel::Preictal)));
    picks.sort_by(|a, b| a.0.t_start.total_cmp(&b.0.t_start));
    tl.gather(&picks, bank)
}
