//! Runs the `ictal` binary end to end on tiny configurations.

use ictal::ingest::render_annotations;
use ictal::predictor::{AlarmTrace, TraceRecord};
use ictal::{SeizureAnnotations, SeizureEvent};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

/// Recordings at 128 Hz with a seizure just over an hour in, a 30 s
/// collection window and a network small enough to train in a second.
const TINY: &str = "\
# tiny end-to-end configuration
seed = 3
synth.patients = 1
synth.recordings_per_patient = 1
synth.duration_s = 3720
synth.seizure_onsets_s = 3660
synth.channels = 2
synth.sample_rate_hz = 128
collection.t_minutes = 0.5
collection.m_hours = 1
collection.method_a_preictal_minutes = 0.5
model.base_width = 2
model.embed_dim = 8
model.siamese_hidden = 8, 4
train.max_epochs = 2
train.n_pairs = 64
train.batch_size = 16
";

fn ictal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ictal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ictal(args);
    assert!(
        out.status.success(),
        "ictal {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn exit_code(args: &[&str]) -> i32 {
    ictal(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().expect("temp dir");
        let config = dir.path().join("run.conf");
        fs::write(&config, format!("{TINY}{extra}")).expect("write config");
        Self { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, out: &str, rest: &[&str]) -> String {
        let out = self.path(out);
        let mut args = vec![command, "--config", s(&self.config), "--out", s(&out)];
        args.extend_from_slice(rest);
        ok(&args)
    }

    fn code(&self, command: &str, out: &str, rest: &[&str]) -> i32 {
        let out = self.path(out);
        let mut args = vec![command, "--config", s(&self.config), "--out", s(&out)];
        args.extend_from_slice(rest);
        exit_code(&args)
    }
}

fn files_with_extension(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).expect("readable dir") {
        let p = entry.expect("dir entry").path();
        if p.is_dir() {
            found.extend(files_with_extension(&p, ext));
        } else if p.extension().is_some_and(|e| e == ext) {
            found.push(p);
        }
    }
    found.sort();
    found
}

fn manifest_value(dir: &Path, key: &str) -> Vec<String> {
    fs::read_to_string(dir.join("manifest.txt"))
        .expect("manifest")
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .filter(|(k, _)| *k == key)
        .map(|(_, v)| v.to_string())
        .collect()
}

#[test]
fn synth_writes_every_recording_and_is_deterministic() {
    let ws = Workspace::new("synth.patients = 2\nsynth.recordings_per_patient = 2\nsynth.duration_s = 60\nsynth.seizure_onsets_s = 10\n");
    ws.run("synth", "a", &[]);
    ws.run("synth", "b", &[]);
    let a = files_with_extension(&ws.path("a"), "edf");
    let b = files_with_extension(&ws.path("b"), "edf");
    assert_eq!(a.len(), 4);
    assert_eq!(files_with_extension(&ws.path("a"), "seizures").len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
    let text = fs::read_to_string(ws.path("a").join("manifest.txt")).unwrap();
    assert!(text.starts_with("# ictal-manifest v1\n"));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let ws = Workspace::new("");
    assert_eq!(ws.code("synth", "o", &["--set", "synth.duration_s=-5"]), 2);
    assert_eq!(ws.code("synth", "o", &["--set", "synth.no_such_key=1"]), 2);
    assert_eq!(ws.code("synth", "o", &["--set", "missing-equals"]), 2);
    let bad = ws.path("bad.conf");
    fs::write(&bad, "train.lr = fast\n").unwrap();
    assert_eq!(
        exit_code(&["synth", "--config", s(&bad), "--out", s(&ws.path("o"))]),
        2
    );
}

#[test]
fn missing_input_is_a_data_error() {
    let ws = Workspace::new("");
    let missing = ws.path("nowhere");
    assert_eq!(ws.code("train-siamese", "o", &["--input", s(&missing)]), 3);
}

#[test]
fn siamese_training_and_replay_are_reproducible() {
    let ws = Workspace::new("");
    ws.run("synth", "data", &[]);
    let data = ws.path("data").join("patient-01");
    ws.run(
        "synth",
        "held",
        &["--set", "synth.recordings_per_patient=2"],
    );
    let edf = ws.path("held").join("patient-01").join("synth-3-1.edf");
    let before: Vec<Vec<u8>> = files_with_extension(&data, "edf")
        .iter()
        .map(|p| fs::read(p).unwrap())
        .collect();

    ws.run("train-siamese", "m1", &["--input", s(&data)]);
    ws.run("train-siamese", "m2", &["--input", s(&data)]);
    let (m1, m2) = (ws.path("m1"), ws.path("m2"));
    assert!(m1.join("run.conf").is_file());
    for name in [
        "weights.ictw",
        "support.ics",
        "norm.txt",
        "history.csv",
        "segments.txt",
    ] {
        assert!(m1.join(name).is_file(), "missing {name}");
        assert!(
            fs::read(m1.join(name)).unwrap() == fs::read(m2.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let after: Vec<Vec<u8>> = files_with_extension(&data, "edf")
        .iter()
        .map(|p| fs::read(p).unwrap())
        .collect();
    assert_eq!(before, after, "training modified its input");

    let conf = fs::read(m1.join("run.conf")).unwrap();
    let digest: String = Sha256::digest(&conf)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(manifest_value(&m1, "config_sha256"), vec![digest]);
    assert_eq!(manifest_value(&m1, "method"), vec!["siamese".to_string()]);
    assert_eq!(manifest_value(&m1, "seed"), vec!["3".to_string()]);

    ws.run("replay", "r1", &["--model", s(&m1), "--recording", s(&edf)]);
    ws.run("replay", "r2", &["--model", s(&m1), "--recording", s(&edf)]);
    let name = format!("{}.trace.csv", edf.file_stem().unwrap().to_string_lossy());
    let t1 = fs::read_to_string(ws.path("r1").join(&name)).unwrap();
    assert_eq!(t1, fs::read_to_string(ws.path("r2").join(&name)).unwrap());
    let trace = AlarmTrace::parse_csv(&t1).unwrap();
    assert_eq!(trace.records.len(), 3720);
    let own = files_with_extension(&data, "edf").remove(0);
    assert_eq!(
        ws.code("replay", "r4", &["--model", s(&m1), "--recording", s(&own)]),
        3
    );

    assert_eq!(
        ws.code(
            "replay",
            "r3",
            &["--model", s(&m1), "--recording", s(&edf), "--classifier"]
        ),
        3
    );
}

#[test]
fn plain_classifier_and_fine_tuning() {
    let ws = Workspace::new("");
    ws.run("synth", "one", &[]);
    let one = ws.path("one").join("patient-01");
    assert_eq!(ws.code("train-cnn", "x", &["--input", s(&one)]), 3);

    ws.run("synth", "two", &["--set", "synth.recordings_per_patient=2"]);
    let two = ws.path("two").join("patient-01");
    ws.run("train-cnn", "cnn", &["--input", s(&two)]);
    assert_eq!(
        manifest_value(&ws.path("cnn"), "method"),
        vec!["method-a".to_string()]
    );

    assert_eq!(ws.code("fine-tune", "ft", &["--input", s(&one)]), 2);
    let cnn = ws.path("cnn");
    ws.run("fine-tune", "ft", &["--from", s(&cnn), "--input", s(&one)]);
    assert_eq!(
        manifest_value(&ws.path("ft"), "method"),
        vec!["method-b".to_string()]
    );
    assert!(ws.path("ft").join("weights.ictw").is_file());

    ws.run("loo", "loo", &["--input", s(&two), "--patient", "p9"]);
    let folds = fs::read_to_string(ws.path("loo").join("folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 2 + 2, "{folds}");
    let report = fs::read_to_string(ws.path("loo").join("report.txt")).unwrap();
    assert!(
        report.lines().any(|l| l.starts_with("p9 | 2 | ")),
        "{report}"
    );
}

fn write_trace(dir: &Path, id: &str, len: usize, alarm_at: Option<usize>) -> PathBuf {
    let mut trace = AlarmTrace::new(id, 0.0);
    trace.records = (0..len)
        .map(|i| TraceRecord {
            t_s: i as f64,
            s_p: 0.5,
            s_i: 0.5,
            smoothed_p: 0.5,
            smoothed_i: 0.5,
            decision: false,
            ema: 0.0,
            alarm: alarm_at == Some(i),
        })
        .collect();
    fs::create_dir_all(dir).unwrap();
    let path = dir.join(format!("{id}.trace.csv"));
    fs::write(&path, trace.to_csv()).unwrap();
    path
}

fn write_annotation(dir: &Path, id: &str, onset_s: f64) {
    let ann = SeizureAnnotations::new(vec![SeizureEvent {
        onset_s,
        offset_s: onset_s + 5.0,
    }])
    .unwrap();
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(format!("{id}.seizures")), render_annotations(&ann)).unwrap();
}

#[test]
fn evaluate_reproduces_the_reported_sensitivities() {
    let ws = Workspace::new("");
    let ann = ws.path("ann");
    let mut args: Vec<String> = Vec::new();
    // patient, seizures, predicted
    for (patient, n, hit) in [("p1", 49, 46), ("p2", 49, 42), ("p3", 7, 7)] {
        for k in 0..n {
            let id = format!("{patient}-s{k:02}");
            let alarm = (k < hit).then_some(50);
            let path = write_trace(&ws.path("traces").join(patient), &id, 100, alarm);
            write_annotation(&ann, &id, 90.0);
            args.extend(["--trace".to_string(), path.display().to_string()]);
        }
    }
    let out = ws.path("report");
    let mut argv = vec!["evaluate", "--out", s(&out), "--annotations", s(&ann)];
    argv.extend(args.iter().map(String::as_str));
    let text = ok(&argv);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "# ictal-report v1");
    assert!(rows.contains(&"p1 | 49 | 46 | 93.8 | 0.000"), "{text}");
    assert!(rows.contains(&"p2 | 49 | 42 | 85.7 | 0.000"), "{text}");
    assert!(rows.contains(&"p3 | 7 | 7 | 100.0 | 0.000"), "{text}");
    assert!(rows.contains(&"all | 105 | 95 | 90.4 | 0.000"), "{text}");
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), text);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(
        csv.lines().any(|l| l.starts_with("p1,49,46,93.8776,")),
        "{csv}"
    );
}

#[test]
fn evaluate_without_traces_prints_only_the_header() {
    let ws = Workspace::new("");
    let text = ok(&["evaluate", "--out", s(&ws.path("empty"))]);
    assert_eq!(
        text,
        "# ictal-report v1\npatient | seizures | predicted | sensitivity | fpr/h\n"
    );
}

#[test]
fn horizon_flag_overrides_the_configuration() {
    let ws = Workspace::new("eval.horizon_minutes = 60\n");
    let ann = ws.path("ann");
    // Alarm 1900 s (about 32 min) before the onset.
    let trace = write_trace(&ws.path("traces").join("p1"), "lead", 4000, Some(100));
    write_annotation(&ann, "lead", 2000.0);
    let base = ["--annotations", s(&ann), "--trace", s(&trace)];
    let wide = ws.run("evaluate", "wide", &base);
    assert!(wide.contains("p1 | 1 | 1 | 100.0"), "{wide}");
    let mut narrow_args = base.to_vec();
    narrow_args.extend(["--horizon", "30"]);
    let narrow = ws.run("evaluate", "narrow", &narrow_args);
    assert!(narrow.contains("p1 | 1 | 0 | 0.0"), "{narrow}");
    assert!(
        !narrow.contains("| 0.000\n"),
        "the early alarm should count as false: {narrow}"
    );
}
