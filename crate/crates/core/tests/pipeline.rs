//! Replay and cross-patient transfer on small synthetic patients.

use ictal::eval::{
    run_method_b, score_alarms, train_method_a, train_siamese, EvalOptions, MethodASetup,
    MethodBSetup, SiameseModel, SiameseSetup,
};
use ictal::ingest::synth_recording;
use ictal::model::{ArchitectureSpec, HeadKind, TrainConfig};
use ictal::predictor::{replay, PredictorError, SmoothingPolicy};
use ictal::segments::CollectionConfig;
use ictal::{Recording, ScaleBank, SynthConfig};
use std::sync::OnceLock;

fn recording(seed: u64, index: u64, duration_s: f64, onset_s: Option<f64>) -> Recording {
    synth_recording(&SynthConfig {
        duration_s,
        seizure_onsets_s: onset_s.into_iter().collect(),
        channel_count: CHANNELS,
        sample_rate_hz: 128.0,
        seed,
        recording_index: index,
        ..SynthConfig::default()
    })
    .expect("valid synth config")
}

fn collection() -> CollectionConfig {
    CollectionConfig {
        t_minutes: 5.0,
        m_hours: 1.0,
        method_a_preictal_minutes: 10.0,
        ..CollectionConfig::default()
    }
}

fn spec(head: HeadKind) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::standard(CHANNELS, head).with_base_width(4);
    spec.embed_dim = 32;
    spec
}

const PATIENT: u64 = 21;
const CHANNELS: usize = 4;

/// Trained once and shared by the replay tests.
fn siamese() -> &'static SiameseModel {
    static MODEL: OnceLock<SiameseModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut setup = SiameseSetup::new(CHANNELS);
        setup.spec = setup.spec.clone().with_base_width(8);
        setup.collection = collection();
        setup.n_pairs = 2000;
        setup.train = TrainConfig {
            max_epochs: 20,
            seed: 2,
            ..TrainConfig::default()
        };
        let training = recording(PATIENT, 0, 4000.0, Some(3960.0));
        train_siamese(&[training], &ScaleBank::default(), &setup).expect("training succeeds")
    })
}

fn run(rec: &Recording) -> Result<ictal::predictor::AlarmTrace, PredictorError> {
    let m = siamese();
    replay(
        rec,
        &m.params,
        &m.support,
        &SmoothingPolicy::default(),
        &m.norm,
        &ScaleBank::default(),
    )
}

#[test]
fn replay_emits_one_record_per_window_and_is_deterministic() {
    let rec = recording(PATIENT, 1, 600.0, None);
    let a = run(&rec).unwrap();
    assert_eq!(a.records.len(), 600);
    assert_eq!(a.recording_id, rec.id);
    assert!(a.records.windows(2).all(|w| w[1].t_s == w[0].t_s + 1.0));
    let b = run(&rec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn replaying_the_support_recording_is_leakage() {
    let training = recording(PATIENT, 0, 4000.0, Some(3960.0));
    assert!(matches!(run(&training), Err(PredictorError::Leakage(_))));
}

#[test]
fn held_out_seizure_raises_an_alarm_before_onset() {
    let onset = 1200.0;
    let rec = recording(PATIENT, 2, 1300.0, Some(onset));
    let trace = run(&rec).unwrap();
    let alarms = trace.alarms();
    // The generator's preictal state begins ten minutes before onset.
    assert!(
        alarms.iter().any(|&t| t > onset - 600.0 && t <= onset),
        "alarms {alarms:?}, onset {onset}, history {:?}",
        siamese().history
    );
    let score = score_alarms(&trace, &rec.annotations, &EvalOptions::default()).unwrap();
    assert_eq!(score.predicted, vec![true]);
}

#[test]
fn fine_tuning_does_not_lose_sensitivity() {
    let bank = ScaleBank::default();
    let source: Vec<Recording> = (0..2)
        .map(|i| {
            let mut r = recording(31, i, 4000.0, Some(3960.0));
            r.start_offset_s = i as f64 * 4000.0;
            r
        })
        .collect();
    let mut a = MethodASetup::new(CHANNELS);
    a.spec = spec(HeadKind::Classifier);
    a.collection = collection();
    a.train.max_epochs = 5;
    let pretrained = train_method_a(&source, &bank, &a).unwrap();

    let tune = [recording(32, 0, 4000.0, Some(3960.0))];
    let tests: Vec<Recording> = (1..=3)
        .map(|i| recording(32, i, 1300.0, Some(1200.0)))
        .collect();
    let policy = SmoothingPolicy::default();
    let opts = EvalOptions::default();
    let row = |epochs| {
        let setup = MethodBSetup {
            train: TrainConfig {
                max_epochs: epochs,
                ..TrainConfig::default()
            },
            collection: collection(),
            ..MethodBSetup::default()
        };
        run_method_b(
            "p32",
            "p31",
            &pretrained.params,
            &tune,
            &tests,
            &bank,
            &setup,
            &policy,
            &opts,
        )
        .unwrap()
        .0
    };
    let untuned = row(0);
    let tuned = row(5);
    assert_eq!(untuned.source.as_deref(), Some("p31"));
    assert_eq!((untuned.seizures, tuned.seizures), (3, 3));
    assert!(
        tuned.predicted >= untuned.predicted,
        "fine-tuned {} of 3, untuned {} of 3",
        tuned.predicted,
        untuned.predicted
    );
}
