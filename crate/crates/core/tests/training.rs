//! Training, fine-tuning and batch-norm behaviour on synthetic EEG.

use ictal::dsp::{apply_norm, fit_norm_stats, WindowTensor};
use ictal::eval::{train_siamese, SiameseSetup};
use ictal::ingest::synth_recording;
use ictal::model::{
    embed_forward, evaluate, fine_tune, train, ArchitectureSpec, HeadKind, Mode, ModelError,
    ModelParams, Params, Sample, TrainConfig,
};
use ictal::segments::{collect_segments, split_train_val, CollectionConfig};
use ictal::{Recording, ScaleBank, SynthConfig};

const CHANNELS: usize = 4;

/// Five minutes of interictal EEG at the start and a seizure 66 minutes in.
fn recording(seed: u64) -> Recording {
    synth_recording(&SynthConfig {
        duration_s: 4000.0,
        seizure_onsets_s: vec![3960.0],
        channel_count: CHANNELS,
        sample_rate_hz: 128.0,
        seed,
        ..SynthConfig::default()
    })
    .expect("valid synth config")
}

fn collection() -> CollectionConfig {
    CollectionConfig {
        t_minutes: 5.0,
        m_hours: 1.0,
        ..CollectionConfig::default()
    }
}

fn small_spec(head: HeadKind) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::standard(CHANNELS, head).with_base_width(4);
    spec.embed_dim = 32;
    spec
}

/// Normalized, labeled windows of one seizure: 300 interictal, 300 preictal.
fn windows(seed: u64) -> Vec<WindowTensor> {
    let store = collect_segments(&[recording(seed)], &collection(), &ScaleBank::default()).unwrap();
    let norm = fit_norm_stats(store.windows()).unwrap();
    store.windows().map(|w| apply_norm(w, &norm)).collect()
}

fn samples(ws: &[WindowTensor]) -> Vec<Sample<'_>> {
    ws.iter()
        .map(|w| Sample::Window {
            x: &w.values,
            preictal: w.label.is_preictal_class(),
        })
        .collect()
}

fn quick(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn siamese_separates_2000_synthetic_pairs() {
    let mut setup = SiameseSetup::new(CHANNELS);
    setup.spec = setup.spec.clone().with_base_width(8);
    setup.collection = collection();
    setup.n_pairs = 2000;
    setup.seed = 1;
    setup.train.seed = 1;
    let model = train_siamese(&[recording(11)], &ScaleBank::default(), &setup).unwrap();
    let h = &model.history;
    assert!(!h.diverged);
    assert!(h.epochs.len() <= 51);
    let best = h.best().unwrap();
    assert!(
        best.val_accuracy >= 0.95,
        "best epoch {} accuracy {}",
        best.epoch,
        best.val_accuracy
    );
}

#[test]
fn same_seed_gives_identical_history_and_weights() {
    let ws = windows(12);
    let (tr, va) = split_train_val(ws, 0.85, 2).unwrap();
    let spec = small_spec(HeadKind::Classifier);
    let run = || train(&spec, &samples(&tr), &samples(&va), &quick(3, 2)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    let other = train(&spec, &samples(&tr), &samples(&va), &quick(4, 2)).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn huge_learning_rate_is_caught() {
    let ws = windows(13);
    let (tr, va) = split_train_val(ws, 0.85, 2).unwrap();
    let cfg = TrainConfig {
        lr: 1e3,
        ..quick(5, 5)
    };
    match train(
        &small_spec(HeadKind::Classifier),
        &samples(&tr),
        &samples(&va),
        &cfg,
    ) {
        Err(ModelError::Diverged { .. }) => {}
        Ok(out) => {
            assert!(
                out.history.diverged,
                "lr 1e3 neither diverged nor flagged: {:?}",
                out.history
            );
            assert!(out.params.is_finite());
        }
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn classifier_ranks_held_out_preictal_windows_higher() {
    let ws = windows(14);
    let (tr, rest) = split_train_val(ws, 0.7, 6).unwrap();
    let (va, held) = split_train_val(rest, 0.5, 7).unwrap();
    let out = train(
        &small_spec(HeadKind::Classifier),
        &samples(&tr),
        &samples(&va),
        &quick(8, 10),
    )
    .unwrap();
    let mut sums = [(0.0f64, 0usize); 2];
    for w in &held {
        let p = ictal::model::classify(&out.params, &w.values, Mode::Infer).unwrap() as f64;
        let slot = &mut sums[w.label.is_preictal_class() as usize];
        slot.0 += p;
        slot.1 += 1;
    }
    let [inter, pre] = sums.map(|(s, n)| s / n as f64);
    assert!(pre > inter, "preictal {pre:.3} vs interictal {inter:.3}");
}

#[test]
fn running_statistics_are_used_at_inference() {
    let ws = windows(15);
    let (tr, va) = split_train_val(ws, 0.85, 2).unwrap();
    let out = train(
        &small_spec(HeadKind::Classifier),
        &samples(&tr),
        &samples(&va),
        &quick(9, 1),
    )
    .unwrap();
    let x = &tr[0].values;
    let inferred = embed_forward(&out.params, x, Mode::Infer, None).unwrap();
    let batch_stats = embed_forward(&out.params, x, Mode::Train, None).unwrap();
    assert_ne!(inferred, batch_stats);
    assert_eq!(
        inferred,
        embed_forward(&out.params, x, Mode::Infer, None).unwrap()
    );
}

fn pretrained() -> (ModelParams, ArchitectureSpec) {
    let ws = windows(16);
    let (tr, va) = split_train_val(ws, 0.85, 2).unwrap();
    let spec = small_spec(HeadKind::Classifier);
    let out = train(&spec, &samples(&tr), &samples(&va), &quick(10, 3)).unwrap();
    (out.params, spec)
}

#[test]
fn fine_tuning_contract() {
    let (base, spec) = pretrained();
    let target = windows(17);
    let (tr, va) = split_train_val(target, 0.85, 3).unwrap();
    let (tr, va) = (samples(&tr), samples(&va));

    let frozen = fine_tune(&base, &spec, &tr, &va, &quick(11, 0)).unwrap();
    assert_eq!(frozen.params, base);

    let wider = spec.clone().with_base_width(8);
    assert!(matches!(
        fine_tune(&base, &wider, &tr, &va, &quick(11, 1)),
        Err(ModelError::FingerprintMismatch { .. })
    ));

    let tuned = fine_tune(&base, &spec, &tr, &va, &quick(11, 5)).unwrap();
    let (before, _) = evaluate(&base, &va).unwrap();
    let (after, _) = evaluate(&tuned.params, &va).unwrap();
    assert!(
        after <= before,
        "validation loss rose from {before} to {after}"
    );
    assert_eq!(tuned.history.epochs[0].val_loss, before);
}

#[test]
fn fresh_initialization_is_seeded() {
    let spec = small_spec(HeadKind::siamese());
    let a = Params::<f32>::init(&spec, 1).unwrap();
    assert_eq!(a, Params::<f32>::init(&spec, 1).unwrap());
    assert_ne!(a, Params::<f32>::init(&spec, 2).unwrap());
    assert!(a
        .bns
        .iter()
        .all(|bn| bn.running_var.iter().all(|&v| v == 1.0)));
}
