//! Command-line front end. Each command reads a [`RunConfig`], runs one
//! pipeline stage and writes versioned artifacts plus a run manifest.

use crate::config::{ConfigError, RunConfig};
use crate::dsp::{DspError, NormStats, TensorCacheWriter, Tensorizer};
use crate::eval::{
    fine_tune_one_seizure, render_report, run_method_a_loo, score_alarms, train_method_a,
    train_siamese, EvalError, EvalReport, EvalRow,
};
use crate::ingest::{
    parse_annotations, parse_chbmit_summary, parse_edf, render_annotations, synth_recording,
    write_edf, IngestError, Recording, SeizureAnnotations, SynthConfig,
};
use crate::model::{load_params, save_params, History, ModelError, ModelParams};
use crate::predictor::{replay, replay_classifier, AlarmTrace, PredictorError};
use crate::segments::{read_support, write_support, SegmentError};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};

pub const WEIGHTS_FILE: &str = "weights.ictw";
pub const SUPPORT_FILE: &str = "support.ics";
pub const NORM_FILE: &str = "norm.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SEGMENTS_FILE: &str = "segments.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RUN_CONFIG_FILE: &str = "run.conf";
pub const ANNOTATION_EXT: &str = "seizures";

#[derive(Debug, Parser)]
#[command(
    name = "ictal",
    version,
    about = "Seizure prediction from one recorded seizure"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` assignment, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic EDF recordings and annotation files.
    Synth,
    /// Parse recordings and write wavelet tensor caches.
    Ingest {
        /// EDF file or directory of EDF files.
        #[arg(long)]
        input: PathBuf,
        /// CHB-MIT summary file supplying the annotations.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train the Siamese model on the first qualifying seizure.
    TrainSiamese {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the plain classifier on every seizure.
    TrainCnn {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fine-tune classifier weights on one seizure of a new patient.
    FineTune {
        /// Model directory holding the weights to start from.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a recording window by window and write the alarm trace.
    Replay {
        /// Model directory (weights, normalization, support set).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        /// Use the classifier probability instead of support-set scores.
        #[arg(long)]
        classifier: bool,
    },
    /// Score alarm traces against annotations and render the report.
    Evaluate {
        /// Trace CSV files; each file's parent directory names its patient.
        #[arg(long = "trace")]
        traces: Vec<PathBuf>,
        /// Directory holding `<recording id>.seizures` files.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Prediction horizon in minutes (overrides `eval.horizon_minutes`).
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Leave-one-seizure-out evaluation of the plain classifier.
    Loo {
        /// Directory of one patient's recordings, one seizure each.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "patient")]
        patient: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest { .. } => "ingest",
            Command::TrainSiamese { .. } => "train-siamese",
            Command::TrainCnn { .. } => "train-cnn",
            Command::FineTune { .. } => "fine-tune",
            Command::Replay { .. } => "replay",
            Command::Evaluate { .. } => "evaluate",
            Command::Loo { .. } => "loo",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::BadScales(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::InvalidConfig(_) | SegmentError::OddPairCount(_) => {
                CliError::Config(e.to_string())
            }
            SegmentError::Dsp(d) => d.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } => CliError::Numeric(e.to_string()),
            ModelError::BadConfig(_) | ModelError::BadSpec(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Model(m) => m.into(),
            PredictorError::Dsp(d) => d.into(),
            PredictorError::InvalidPolicy(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Predictor(p) => p.into(),
            EvalError::Segment(s) => s.into(),
            EvalError::Dsp(d) => d.into(),
            EvalError::InvalidOptions(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Configuration from defaults, the `--config` file, `--set` pairs and the
/// dedicated flags, in that order.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply(&text)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

struct Manifest {
    command: &'static str,
    method: Option<&'static str>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            method: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes the manifest and the effective configuration it hashes.
    fn write(mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let conf = cfg.out_dir.join(RUN_CONFIG_FILE);
        write(&conf, cfg.render())?;
        self.outputs.push(conf);
        let mut s = format!(
            "# ictal-manifest v1\ncommand = {}\nconfig_sha256 = {}\nseed = {}\n",
            self.command,
            cfg.hash(),
            cfg.seed
        );
        if let Some(m) = self.method {
            s.push_str(&format!("method = {m}\n"));
        }
        for p in &self.inputs {
            s.push_str(&format!("input = {}\n", p.display()));
        }
        for p in &self.outputs {
            s.push_str(&format!("output = {}\n", p.display()));
        }
        write(&cfg.out_dir.join(MANIFEST_FILE), s)
    }
}

fn annotation_path(edf: &Path) -> PathBuf {
    edf.with_extension(ANNOTATION_EXT)
}

/// Loads one EDF file; the id is the file stem and annotations come from a
/// sibling `.seizures` file when present.
pub fn load_recording(path: &Path) -> Result<Recording, CliError> {
    let mut rec = parse_edf(&read(path)?)?;
    rec.id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| rec.id.clone());
    let ann = annotation_path(path);
    if ann.exists() {
        rec.annotations = parse_annotations(&read_text(&ann)?)?;
        rec.validate()?;
    }
    for w in &rec.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(rec)
}

/// Every `.edf` under `input` (or `input` itself), ordered on the patient
/// timeline.
pub fn load_recordings(input: &Path) -> Result<Vec<Recording>, CliError> {
    let paths: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| io_err(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("edf")))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if paths.is_empty() {
        return Err(CliError::Data(format!(
            "no EDF files under {}",
            input.display()
        )));
    }
    let mut recs = paths
        .iter()
        .map(|p| load_recording(p))
        .collect::<Result<Vec<_>, _>>()?;
    recs.sort_by(|a, b| {
        a.start_offset_s
            .total_cmp(&b.start_offset_s)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(recs)
}

fn channels_of(recs: &[Recording]) -> Result<usize, CliError> {
    let c = recs[0].n_channels();
    if recs.iter().any(|r| r.n_channels() != c) {
        return Err(CliError::Data("recordings differ in channel count".into()));
    }
    Ok(c)
}

fn history_csv(h: &History) -> String {
    format!("# ictal-history v1\n{}", h.to_csv())
}

fn check_history(h: &History) -> Result<(), CliError> {
    if h.diverged {
        return Err(CliError::Numeric(format!(
            "training hit a non-finite value; best weights are from epoch {}",
            h.best_epoch
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Ingest { input, summary } => cmd_ingest(&cfg, &input, summary.as_deref()),
        Command::TrainSiamese { input } => cmd_train_siamese(&cfg, &input),
        Command::TrainCnn { input } => cmd_train_cnn(&cfg, &input),
        Command::FineTune { from, input } => {
            let from = from
                .ok_or_else(|| CliError::Config("fine-tune requires --from <model dir>".into()))?;
            cmd_fine_tune(&cfg, &from, &input)
        }
        Command::Replay {
            model,
            recording,
            classifier,
        } => cmd_replay(&cfg, &model, &recording, classifier).map(|_| ()),
        Command::Evaluate {
            traces,
            annotations,
            horizon,
        } => {
            let mut cfg = cfg;
            if let Some(h) = horizon {
                cfg.eval.horizon_minutes = h;
            }
            cmd_evaluate(&cfg, &traces, annotations.as_deref()).map(|_| ())
        }
        Command::Loo { input, patient } => cmd_loo(&cfg, &input, &patient),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let plan = &cfg.synth;
    plan.recording.validate()?;
    if !(plan.gap_s >= 0.0 && plan.gap_s.is_finite()) {
        return Err(CliError::Config(format!(
            "synth.gap_s {} must be non-negative",
            plan.gap_s
        )));
    }
    let mut m = Manifest::new("synth");
    for p in 0..plan.patients {
        let dir = cfg.out_dir.join(format!("patient-{:02}", p + 1));
        for i in 0..plan.recordings_per_patient {
            let sc = SynthConfig {
                seed: cfg.seed + p as u64,
                recording_index: i as u64,
                ..plan.recording.clone()
            };
            let mut rec = synth_recording(&sc)?;
            rec.start_offset_s = i as f64 * (sc.duration_s + plan.gap_s).ceil();
            let edf = dir.join(format!("{}.edf", rec.id));
            write(&edf, write_edf(&rec)?)?;
            let ann = annotation_path(&edf);
            write(&ann, render_annotations(&rec.annotations))?;
            log::info!("wrote {}", edf.display());
            m.outputs.extend([edf, ann]);
        }
    }
    m.write(cfg)
}

pub fn cmd_ingest(cfg: &RunConfig, input: &Path, summary: Option<&Path>) -> Result<(), CliError> {
    let mut recs = load_recordings(input)?;
    let mut m = Manifest::new("ingest");
    m.inputs.push(input.to_path_buf());
    if let Some(s) = summary {
        let table = parse_chbmit_summary(&read_text(s)?)?;
        for r in &mut recs {
            if let Some(a) = table.get(&format!("{}.edf", r.id)) {
                r.annotations = a.clone();
                r.validate()?;
            }
        }
        m.inputs.push(s.to_path_buf());
    }
    let tz = Tensorizer::new(&cfg.scales);
    for rec in &recs {
        let prepared = tz.prepare(rec)?;
        let n = Tensorizer::window_count(&prepared);
        let path = cfg.out_dir.join(format!("{}.ict", rec.id));
        fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = TensorCacheWriter::new(
            std::io::BufWriter::new(file),
            rec.n_channels(),
            cfg.scales.len(),
            n,
        )
        .map_err(|e| io_err(&path, e))?;
        for t in tz.windows(&prepared)? {
            w.push(&t)?;
        }
        w.finish()?;
        let ann = cfg.out_dir.join(format!("{}.{ANNOTATION_EXT}", rec.id));
        write(&ann, render_annotations(&rec.annotations))?;
        log::info!("{}: {n} windows", rec.id);
        m.outputs.extend([path, ann]);
    }
    m.write(cfg)
}

fn write_norm_and_history(
    cfg: &RunConfig,
    m: &mut Manifest,
    params: &ModelParams,
    norm: &NormStats,
    history: &History,
) -> Result<(), CliError> {
    let files = [
        (WEIGHTS_FILE, save_params(params)),
        (NORM_FILE, norm.render().into_bytes()),
        (HISTORY_FILE, history_csv(history).into_bytes()),
    ];
    for (name, bytes) in files {
        let p = cfg.out_dir.join(name);
        write(&p, bytes)?;
        m.outputs.push(p);
    }
    Ok(())
}

pub fn cmd_train_siamese(cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let recs = load_recordings(input)?;
    let setup = cfg.siamese_setup(channels_of(&recs)?);
    let model = train_siamese(&recs, &cfg.scales, &setup)?;
    let mut m = Manifest::new("train-siamese");
    m.method = Some("siamese");
    m.inputs.push(input.to_path_buf());
    write_norm_and_history(cfg, &mut m, &model.params, &model.norm, &model.history)?;
    for (name, bytes) in [
        (SUPPORT_FILE, write_support(&model.support)),
        (SEGMENTS_FILE, model.store.manifest().into_bytes()),
    ] {
        let p = cfg.out_dir.join(name);
        write(&p, bytes)?;
        m.outputs.push(p);
    }
    m.write(cfg)?;
    check_history(&model.history)
}

pub fn cmd_train_cnn(cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let recs = load_recordings(input)?;
    let n: usize = recs.iter().map(|r| r.annotations.len()).sum();
    if n < 2 {
        return Err(CliError::Data(format!(
            "the plain classifier needs at least 2 seizures, found {n}; use train-siamese"
        )));
    }
    let model = train_method_a(&recs, &cfg.scales, &cfg.method_a_setup(channels_of(&recs)?))?;
    let mut m = Manifest::new("train-cnn");
    m.method = Some("method-a");
    m.inputs.push(input.to_path_buf());
    write_norm_and_history(cfg, &mut m, &model.params, &model.norm, &model.history)?;
    m.write(cfg)?;
    check_history(&model.history)
}

pub fn cmd_fine_tune(cfg: &RunConfig, from: &Path, input: &Path) -> Result<(), CliError> {
    let pretrained = load_params(&read(&from.join(WEIGHTS_FILE))?)?;
    let recs = load_recordings(input)?;
    let model = fine_tune_one_seizure(&pretrained, &recs, &cfg.scales, &cfg.method_b_setup())?;
    let mut m = Manifest::new("fine-tune");
    m.method = Some("method-b");
    m.inputs
        .extend([from.join(WEIGHTS_FILE), input.to_path_buf()]);
    write_norm_and_history(cfg, &mut m, &model.params, &model.norm, &model.history)?;
    m.write(cfg)?;
    check_history(&model.history)
}

/// Returns the path of the written trace.
pub fn cmd_replay(
    cfg: &RunConfig,
    model: &Path,
    recording: &Path,
    classifier: bool,
) -> Result<PathBuf, CliError> {
    let params = load_params(&read(&model.join(WEIGHTS_FILE))?)?;
    let norm = NormStats::parse(&read_text(&model.join(NORM_FILE))?)?;
    let rec = load_recording(recording)?;
    let trace = if classifier {
        replay_classifier(&rec, &params, &cfg.policy, &norm, &cfg.scales)?
    } else {
        let support = read_support(&read(&model.join(SUPPORT_FILE))?)?;
        replay(&rec, &params, &support, &cfg.policy, &norm, &cfg.scales)?
    };
    let path = cfg.out_dir.join(format!("{}.trace.csv", rec.id));
    write(&path, trace.to_csv())?;
    log::info!(
        "{}: {} windows, {} alarms",
        rec.id,
        trace.records.len(),
        trace.alarms().len()
    );
    let mut m = Manifest::new("replay");
    m.method = Some(if classifier { "classifier" } else { "siamese" });
    m.inputs
        .extend([model.to_path_buf(), recording.to_path_buf()]);
    m.outputs.push(path.clone());
    m.write(cfg)?;
    Ok(path)
}

/// Returns the rendered text report.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    traces: &[PathBuf],
    annotations: Option<&Path>,
) -> Result<String, CliError> {
    let mut rows: Vec<EvalRow> = Vec::new();
    for path in traces {
        let trace = AlarmTrace::parse_csv(&read_text(path)?)?;
        let truth = match annotations {
            Some(dir) => {
                let ann = dir.join(format!("{}.{ANNOTATION_EXT}", trace.recording_id));
                parse_annotations(&read_text(&ann)?)?
            }
            None => SeizureAnnotations::empty(),
        };
        let score = score_alarms(&trace, &truth, &cfg.eval)?;
        let patient = path.parent().and_then(|p| p.file_name()).map_or_else(
            || "patient".to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        match rows.iter_mut().find(|r| r.patient == patient) {
            Some(r) => r.add(&score),
            None => {
                let mut r = EvalRow::new(patient);
                r.add(&score);
                rows.push(r);
            }
        }
    }
    let (text, csv) = render_report(&EvalReport { rows });
    let mut m = Manifest::new("evaluate");
    m.inputs.extend(traces.iter().cloned());
    for (name, body) in [("report.txt", &text), ("report.csv", &csv)] {
        let p = cfg.out_dir.join(name);
        write(&p, body)?;
        m.outputs.push(p);
    }
    m.write(cfg)?;
    print!("{text}");
    Ok(text)
}

pub fn cmd_loo(cfg: &RunConfig, input: &Path, patient: &str) -> Result<(), CliError> {
    let recs = load_recordings(input)?;
    if let Some(r) = recs.iter().find(|r| r.annotations.len() != 1) {
        return Err(CliError::Data(format!(
            "{} holds {} seizures; leave-one-out expects one per recording",
            r.id,
            r.annotations.len()
        )));
    }
    let setup = cfg.method_a_setup(channels_of(&recs)?);
    let (row, folds) =
        run_method_a_loo(patient, &recs, &cfg.scales, &setup, &cfg.policy, &cfg.eval)?;
    let (text, csv) = render_report(&EvalReport { rows: vec![row] });
    let mut m = Manifest::new("loo");
    m.method = Some("method-a");
    m.inputs.push(input.to_path_buf());
    let mut fold_lines = String::from("# ictal-folds v1\nfold,test,predicted,false_alarms,hours\n");
    for f in &folds {
        fold_lines.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            f.fold,
            f.test_sources.join(";"),
            f.score.predicted.iter().filter(|&&p| p).count(),
            f.score.false_alarms,
            f.score.hours
        ));
    }
    for (name, body) in [
        ("report.txt", &text),
        ("report.csv", &csv),
        ("folds.csv", &fold_lines),
    ] {
        let p = cfg.out_dir.join(name);
        write(&p, body)?;
        m.outputs.push(p);
    }
    m.write(cfg)?;
    print!("{text}");
    Ok(())
}
