//! Run configuration: UTF-8 `key = value` lines with `#` comments and dotted
//! section names (`train.lr = 0.001`). Every key has a default; unknown keys
//! are rejected.

use crate::dsp::ScaleBank;
use crate::eval::{EvalOptions, MethodASetup, MethodBSetup, SiameseSetup};
use crate::ingest::SynthConfig;
use crate::model::{ArchitectureSpec, HeadKind, TrainConfig};
use crate::predictor::SmoothingPolicy;
use crate::segments::CollectionConfig;
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: bad value {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Synthetic dataset layout on top of the per-recording generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPlan {
    pub patients: usize,
    pub recordings_per_patient: usize,
    /// Idle time between consecutive recordings of one patient.
    pub gap_s: f64,
    pub recording: SynthConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub base_width: usize,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub siamese_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthPlan,
    pub scales: ScaleBank,
    pub collection: CollectionConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub n_pairs: usize,
    pub val_fraction: f64,
    pub support_k: usize,
    pub policy: SmoothingPolicy,
    pub eval: EvalOptions,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthPlan {
                patients: 1,
                recordings_per_patient: 1,
                gap_s: 3600.0,
                recording: SynthConfig {
                    duration_s: 16_200.0,
                    seizure_onsets_s: vec![15_300.0],
                    ..SynthConfig::default()
                },
            },
            scales: ScaleBank::default(),
            collection: CollectionConfig::default(),
            model: ModelShape {
                base_width: 16,
                embed_dim: 128,
                dropout_rate: 0.3,
                siamese_hidden: vec![250, 100],
            },
            train: TrainConfig::default(),
            n_pairs: 20_000,
            val_fraction: 0.85,
            support_k: 5,
            policy: SmoothingPolicy::default(),
            eval: EvalOptions::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad("not a number"))?
            };
        }
        let flag = || match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad("expected true or false")),
        };
        let r = &mut self.synth.recording;
        match key {
            "seed" => self.seed = num!(),
            "synth.patients" => self.synth.patients = num!(),
            "synth.recordings_per_patient" => self.synth.recordings_per_patient = num!(),
            "synth.gap_s" => self.synth.gap_s = num!(),
            "synth.duration_s" => r.duration_s = num!(),
            "synth.seizure_onsets_s" => {
                r.seizure_onsets_s = parse_list(value).ok_or_else(|| bad("number list"))?
            }
            "synth.seizure_duration_s" => r.seizure_duration_s = num!(),
            "synth.channels" => r.channel_count = num!(),
            "synth.sample_rate_hz" => r.sample_rate_hz = num!(),
            "synth.noise_scale" => r.background_noise_scale = num!(),
            "synth.preictal_shift_minutes" => r.preictal_shift_minutes = num!(),
            "dsp.scales" => {
                let v = parse_list(value).ok_or_else(|| bad("number list"))?;
                self.scales = ScaleBank::new(v).map_err(|e| bad(&e.to_string()))?;
            }
            "collection.t_minutes" => self.collection.t_minutes = num!(),
            "collection.m_hours" => self.collection.m_hours = num!(),
            "collection.include_ictal_tail_s" => self.collection.include_ictal_tail_s = num!(),
            "collection.horizon_minutes" => self.collection.prediction_horizon_minutes = num!(),
            "collection.method_a_preictal_minutes" => {
                self.collection.method_a_preictal_minutes = num!()
            }
            "model.base_width" => self.model.base_width = num!(),
            "model.embed_dim" => self.model.embed_dim = num!(),
            "model.dropout_rate" => self.model.dropout_rate = num!(),
            "model.siamese_hidden" => {
                self.model.siamese_hidden = parse_list(value).ok_or_else(|| bad("integer list"))?
            }
            "train.batch_size" => self.train.batch_size = num!(),
            "train.max_epochs" => self.train.max_epochs = num!(),
            "train.lr" => self.train.lr = num!(),
            "train.patience" => self.train.early_stop_patience = num!(),
            "train.dropout" => self.train.dropout = flag()?,
            "train.n_pairs" => self.n_pairs = num!(),
            "train.val_fraction" => self.val_fraction = num!(),
            "train.support_k" => self.support_k = num!(),
            "predict.score_alpha" => self.policy.score_alpha = num!(),
            "predict.delta" => self.policy.delta = num!(),
            "predict.decision_alpha" => self.policy.decision_alpha = num!(),
            "predict.alarm_threshold" => self.policy.alarm_threshold = num!(),
            "predict.refractory_s" => self.policy.refractory_s = num!(),
            "eval.horizon_minutes" => self.eval.horizon_minutes = num!(),
            "eval.postictal_minutes" => self.eval.postictal_minutes = num!(),
            "paths.data_dir" => self.data_dir = PathBuf::from(value),
            "paths.out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order; parses back to
    /// the same configuration.
    pub fn render(&self) -> String {
        let r = &self.synth.recording;
        let p = &self.policy;
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("synth.patients", self.synth.patients.to_string()),
            (
                "synth.recordings_per_patient",
                self.synth.recordings_per_patient.to_string(),
            ),
            ("synth.gap_s", self.synth.gap_s.to_string()),
            ("synth.duration_s", r.duration_s.to_string()),
            ("synth.seizure_onsets_s", list(&r.seizure_onsets_s)),
            ("synth.seizure_duration_s", r.seizure_duration_s.to_string()),
            ("synth.channels", r.channel_count.to_string()),
            ("synth.sample_rate_hz", r.sample_rate_hz.to_string()),
            ("synth.noise_scale", r.background_noise_scale.to_string()),
            (
                "synth.preictal_shift_minutes",
                r.preictal_shift_minutes.to_string(),
            ),
            ("dsp.scales", list(self.scales.scales())),
            (
                "collection.t_minutes",
                self.collection.t_minutes.to_string(),
            ),
            ("collection.m_hours", self.collection.m_hours.to_string()),
            (
                "collection.include_ictal_tail_s",
                self.collection.include_ictal_tail_s.to_string(),
            ),
            (
                "collection.horizon_minutes",
                self.collection.prediction_horizon_minutes.to_string(),
            ),
            (
                "collection.method_a_preictal_minutes",
                self.collection.method_a_preictal_minutes.to_string(),
            ),
            ("model.base_width", self.model.base_width.to_string()),
            ("model.embed_dim", self.model.embed_dim.to_string()),
            ("model.dropout_rate", self.model.dropout_rate.to_string()),
            ("model.siamese_hidden", list(&self.model.siamese_hidden)),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.max_epochs", self.train.max_epochs.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.patience", self.train.early_stop_patience.to_string()),
            ("train.dropout", self.train.dropout.to_string()),
            ("train.n_pairs", self.n_pairs.to_string()),
            ("train.val_fraction", self.val_fraction.to_string()),
            ("train.support_k", self.support_k.to_string()),
            ("predict.score_alpha", p.score_alpha.to_string()),
            ("predict.delta", p.delta.to_string()),
            ("predict.decision_alpha", p.decision_alpha.to_string()),
            ("predict.alarm_threshold", p.alarm_threshold.to_string()),
            ("predict.refractory_s", p.refractory_s.to_string()),
            (
                "eval.horizon_minutes",
                self.eval.horizon_minutes.to_string(),
            ),
            (
                "eval.postictal_minutes",
                self.eval.postictal_minutes.to_string(),
            ),
            ("paths.data_dir", self.data_dir.display().to_string()),
            ("paths.out_dir", self.out_dir.display().to_string()),
        ];
        let mut s = String::from("# ictal-config v1\n");
        for (k, v) in rows {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// SHA-256 of the rendered configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn architecture(&self, channels: usize, head: HeadKind) -> ArchitectureSpec {
        let mut spec =
            ArchitectureSpec::standard(channels, head).with_base_width(self.model.base_width);
        spec.embed_dim = self.model.embed_dim;
        spec.dropout_rate = self.model.dropout_rate;
        spec
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn siamese_setup(&self, channels: usize) -> SiameseSetup {
        SiameseSetup {
            spec: self.architecture(
                channels,
                HeadKind::Siamese {
                    hidden: self.model.siamese_hidden.clone(),
                },
            ),
            train: self.train_config(),
            collection: self.collection.clone(),
            n_pairs: self.n_pairs,
            val_fraction: self.val_fraction,
            support_k: self.support_k,
            seed: self.seed,
        }
    }

    pub fn method_a_setup(&self, channels: usize) -> MethodASetup {
        MethodASetup {
            spec: self.architecture(channels, HeadKind::Classifier),
            train: self.train_config(),
            collection: self.collection.clone(),
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }

    pub fn method_b_setup(&self) -> MethodBSetup {
        MethodBSetup {
            train: self.train_config(),
            collection: self.collection.clone(),
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("train.lr", "0.01").unwrap();
        cfg.set("synth.seizure_onsets_s", "100, 2000.5").unwrap();
        cfg.set("train.dropout", "false").unwrap();
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn comments_sections_and_errors() {
        let cfg = RunConfig::parse("# run\ntrain.lr = 0.5 # fast\n\nseed=7\n").unwrap();
        assert_eq!((cfg.train.lr, cfg.seed), (0.5, 7));
        assert_eq!(
            RunConfig::parse("train.lrr = 1"),
            Err(ConfigError::UnknownKey("train.lrr".into()))
        );
        assert!(matches!(
            RunConfig::parse("seed 3"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("seed = x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse("dsp.scales = 1,-2"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn defaults_feed_the_standard_architecture() {
        let cfg = RunConfig::default();
        assert_eq!(
            cfg.architecture(22, HeadKind::siamese()),
            ArchitectureSpec::standard(22, HeadKind::siamese())
        );
        assert_eq!(cfg.siamese_setup(4).support_k, 5);
    }
}
