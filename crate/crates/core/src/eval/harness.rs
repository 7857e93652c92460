//! Training pipelines and the leave-one-out and cross-patient harnesses.

use super::{score_alarms, AlarmScore, EvalError, EvalOptions, EvalRow};
use crate::dsp::{apply_norm, fit_norm_stats, NormStats, ScaleBank, WindowTensor};
use crate::ingest::Recording;
use crate::model::{
    fine_tune, train, ArchitectureSpec, HeadKind, History, ModelParams, Sample, TrainConfig,
};
use crate::predictor::{replay_classifier, SmoothingPolicy};
use crate::segments::{
    collect_segments, label_windows_method_a, make_pairs, select_support, split_train_val,
    CollectionConfig, PairExample, SegmentStore, SupportSet,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseSetup {
    pub spec: ArchitectureSpec,
    pub train: TrainConfig,
    pub collection: CollectionConfig,
    pub n_pairs: usize,
    pub val_fraction: f64,
    pub support_k: usize,
    pub seed: u64,
}

impl SiameseSetup {
    pub fn new(channels: usize) -> Self {
        Self {
            spec: ArchitectureSpec::standard(channels, HeadKind::siamese()),
            train: TrainConfig::default(),
            collection: CollectionConfig::default(),
            n_pairs: 20_000,
            val_fraction: 0.85,
            support_k: 5,
            seed: 0,
        }
    }
}

/// Everything replay needs from single-seizure training.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    pub params: ModelParams,
    pub history: History,
    pub norm: NormStats,
    /// Normalized with `norm`.
    pub support: SupportSet,
    /// Normalized segment store the pairs were drawn from.
    pub store: SegmentStore,
}

/// Collects one interictal/preictal segment pair from `recs`, builds pairs,
/// trains the Siamese network and draws the support set.
pub fn train_siamese(
    recs: &[Recording],
    bank: &ScaleBank,
    setup: &SiameseSetup,
) -> Result<SiameseModel, EvalError> {
    let raw = collect_segments(recs, &setup.collection, bank)?;
    let norm = fit_norm_stats(raw.windows())?;
    let store = raw.normalized(&norm);
    drop(raw);
    let pairs = make_pairs(&store, setup.n_pairs, setup.seed)?;
    let (tr, va) = split_train_val(pairs, setup.val_fraction, setup.seed.wrapping_add(1))?;
    let outcome = train(
        &setup.spec,
        &pair_samples(&tr),
        &pair_samples(&va),
        &setup.train,
    )?;
    let support = select_support(&store, setup.support_k, setup.seed.wrapping_add(2))?;
    Ok(SiameseModel {
        params: outcome.params,
        history: outcome.history,
        norm,
        support,
        store,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodASetup {
    /// Must carry the classifier head.
    pub spec: ArchitectureSpec,
    pub train: TrainConfig,
    pub collection: CollectionConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

impl MethodASetup {
    pub fn new(channels: usize) -> Self {
        Self {
            spec: ArchitectureSpec::standard(channels, HeadKind::Classifier),
            train: TrainConfig::default(),
            collection: CollectionConfig::default(),
            val_fraction: 0.85,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodAModel {
    pub params: ModelParams,
    pub history: History,
    pub norm: NormStats,
    pub sources: Vec<String>,
}

fn pair_samples(v: &[PairExample]) -> Vec<Sample<'_>> {
    v.iter()
        .map(|p| Sample::Pair {
            a: &p.a.values,
            b: &p.b.values,
            similar: p.similar,
        })
        .collect()
}

fn window_samples(ws: &[WindowTensor]) -> Vec<Sample<'_>> {
    ws.iter()
        .map(|w| Sample::Window {
            x: &w.values,
            preictal: w.label.is_preictal_class(),
        })
        .collect()
}

fn sources_of(ws: &[WindowTensor]) -> Vec<String> {
    let mut ids: Vec<String> = ws.iter().map(|w| w.source.to_string()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Normalizes labeled windows with stats fitted on them, splits and trains
/// (or fine-tunes, when `from` is given).
fn fit_windows(
    windows: Vec<WindowTensor>,
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
    val_fraction: f64,
    seed: u64,
    from: Option<&ModelParams>,
) -> Result<MethodAModel, EvalError> {
    let norm = fit_norm_stats(&windows)?;
    let sources = sources_of(&windows);
    let normed: Vec<WindowTensor> = windows.iter().map(|w| apply_norm(w, &norm)).collect();
    drop(windows);
    let (tr, va) = split_train_val(normed, val_fraction, seed)?;
    let (tr, va) = (window_samples(&tr), window_samples(&va));
    let outcome = match from {
        Some(p) => fine_tune(p, spec, &tr, &va, cfg)?,
        None => train(spec, &tr, &va, cfg)?,
    };
    Ok(MethodAModel {
        params: outcome.params,
        history: outcome.history,
        norm,
        sources,
    })
}

/// Plain classifier trained on every seizure in `recs`.
pub fn train_method_a(
    recs: &[Recording],
    bank: &ScaleBank,
    setup: &MethodASetup,
) -> Result<MethodAModel, EvalError> {
    let windows = label_windows_method_a(recs, &setup.collection, bank, setup.seed)?;
    fit_windows(
        windows,
        &setup.spec,
        &setup.train,
        setup.val_fraction,
        setup.seed.wrapping_add(1),
        None,
    )
}

/// Fold `index` tests on item `test` and trains on the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test: usize,
    pub train: Vec<usize>,
}

pub fn loo_folds(n: usize) -> Result<Vec<Fold>, EvalError> {
    if n < 2 {
        return Err(EvalError::TooFewSeizures(n));
    }
    Ok((0..n)
        .map(|i| Fold {
            index: i,
            test: i,
            train: (0..n).filter(|&j| j != i).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub score: AlarmScore,
    pub train_sources: Vec<String>,
    pub test_sources: Vec<String>,
}

/// Runs `run_fold` on every leave-one-out fold of `data` and pools the
/// scores into one report row. Fails if any fold trained on a recording it
/// was also tested on.
pub fn leave_one_out<'d, D, F>(
    patient: &str,
    data: &'d [D],
    mut run_fold: F,
) -> Result<(EvalRow, Vec<FoldResult>), EvalError>
where
    F: FnMut(&Fold, Vec<&'d D>, &'d D) -> Result<FoldResult, EvalError>,
{
    let mut row = EvalRow::new(patient);
    let mut results = Vec::with_capacity(data.len());
    for fold in loo_folds(data.len())? {
        let train_items = fold.train.iter().map(|&j| &data[j]).collect();
        let r = run_fold(&fold, train_items, &data[fold.test])?;
        if let Some(id) = r
            .test_sources
            .iter()
            .find(|id| r.train_sources.contains(id))
        {
            return Err(EvalError::Leakage {
                fold: fold.index,
                id: id.clone(),
            });
        }
        row.add(&r.score);
        results.push(r);
    }
    Ok((row, results))
}

/// Leave-one-seizure-out evaluation of the plain classifier. Each entry of
/// `seizure_recs` is one recording holding one seizure and its interictal
/// context, in timeline order.
pub fn run_method_a_loo(
    patient: &str,
    seizure_recs: &[Recording],
    bank: &ScaleBank,
    setup: &MethodASetup,
    policy: &SmoothingPolicy,
    opts: &EvalOptions,
) -> Result<(EvalRow, Vec<FoldResult>), EvalError> {
    leave_one_out(patient, seizure_recs, |fold, train_recs, test| {
        let train_recs: Vec<Recording> = train_recs.into_iter().cloned().collect();
        let model = train_method_a(&train_recs, bank, setup)?;
        log::info!(
            "fold {}: trained on {} recordings",
            fold.index,
            train_recs.len()
        );
        let trace = replay_classifier(test, &model.params, policy, &model.norm, bank)?;
        Ok(FoldResult {
            fold: fold.index,
            score: score_alarms(&trace, &test.annotations, opts)?,
            train_sources: model.sources,
            test_sources: vec![test.id.clone()],
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodBSetup {
    pub train: TrainConfig,
    pub collection: CollectionConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MethodBSetup {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            collection: CollectionConfig::default(),
            val_fraction: 0.85,
            seed: 0,
        }
    }
}

/// Fine-tunes `pretrained` on the windows of one seizure, collected from
/// `recs` exactly as for single-seizure training. Normalization is refitted
/// on the new windows.
pub fn fine_tune_one_seizure(
    pretrained: &ModelParams,
    recs: &[Recording],
    bank: &ScaleBank,
    setup: &MethodBSetup,
) -> Result<MethodAModel, EvalError> {
    let store = collect_segments(recs, &setup.collection, bank)?;
    let windows: Vec<WindowTensor> = store.windows().cloned().collect();
    drop(store);
    fit_windows(
        windows,
        &pretrained.spec,
        &setup.train,
        setup.val_fraction,
        setup.seed,
        Some(pretrained),
    )
}

/// Cross-patient transfer: fine-tunes on one target seizure, then replays
/// the target's test recordings. Zero epochs gives the untuned baseline.
#[allow(clippy::too_many_arguments)]
pub fn run_method_b(
    patient: &str,
    source_patient: &str,
    pretrained: &ModelParams,
    tune_recs: &[Recording],
    test_recs: &[Recording],
    bank: &ScaleBank,
    setup: &MethodBSetup,
    policy: &SmoothingPolicy,
    opts: &EvalOptions,
) -> Result<(EvalRow, MethodAModel), EvalError> {
    let model = fine_tune_one_seizure(pretrained, tune_recs, bank, setup)?;
    let mut row = EvalRow::new(patient);
    row.source = Some(source_patient.to_string());
    for rec in test_recs {
        if model.sources.contains(&rec.id) {
            return Err(EvalError::Leakage {
                fold: 0,
                id: rec.id.clone(),
            });
        }
        let trace = replay_classifier(rec, &model.params, policy, &model.norm, bank)?;
        row.add(&score_alarms(&trace, &rec.annotations, opts)?);
    }
    Ok((row, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_seizures() {
        let folds = loo_folds(7).unwrap();
        assert_eq!(folds.len(), 7);
        let mut tests: Vec<usize> = folds.iter().map(|f| f.test).collect();
        tests.sort();
        assert_eq!(tests, (0..7).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train.len(), 6);
            assert!(!f.train.contains(&f.test));
        }
        assert_eq!(loo_folds(1), Err(EvalError::TooFewSeizures(1)));
    }

    fn fake_result(fold: &Fold, train: Vec<&&str>, test: &&str, predicted: bool) -> FoldResult {
        FoldResult {
            fold: fold.index,
            score: AlarmScore {
                predicted: vec![predicted],
                false_alarms: 1,
                hours: 2.0,
            },
            train_sources: train.iter().map(|s| s.to_string()).collect(),
            test_sources: vec![test.to_string()],
        }
    }

    #[test]
    fn pooled_row_sums_folds() {
        let ids = ["a", "b", "c", "d"];
        let (row, results) = leave_one_out("p", &ids, |f, tr, te| {
            Ok(fake_result(f, tr, te, f.index != 2))
        })
        .unwrap();
        assert_eq!(results.len(), 4);
        assert_eq!((row.seizures, row.predicted, row.false_alarms), (4, 3, 4));
        assert_eq!(row.hours, 8.0);
    }

    #[test]
    fn leakage_is_rejected() {
        let ids = ["a", "b", "c"];
        let err = leave_one_out("p", &ids, |f, mut tr, te| {
            tr.push(te);
            Ok(fake_result(f, tr, te, true))
        })
        .unwrap_err();
        assert_eq!(
            err,
            EvalError::Leakage {
                fold: 0,
                id: "a".into()
            }
        );
    }
}
