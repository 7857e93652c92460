//! Single-seizure EEG seizure prediction.
//!
//! The pipeline runs from raw recordings to alarm evaluation:
//!
//! ```text
//! EDF / synthetic recording
//!   ├─ ingest      parse EDF + seizure annotations, synthesize desk-scale data
//!   ├─ dsp         2:1 resample → Mexican-hat CWT per 1 s window → z-score
//!   ├─ segments    interictal/preictal collection, pairs, splits, support sets
//!   ├─ model       6-layer CNN embedding, Siamese head, classifier head, Adam
//!   ├─ predictor   support-set scoring, EMA smoothing, alarms
//!   └─ eval        sensitivity, false predictions per hour, leave-one-out
//! ```
//!
//! Every stochastic step takes an explicit seed, so the whole pipeline is a
//! pure function of its inputs and configuration.

pub mod cli;
pub mod config;
pub mod dsp;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod predictor;
pub mod segments;

pub use dsp::{ScaleBank, WindowLabel, WindowTensor};
pub use ingest::{Recording, SeizureAnnotations, SeizureEvent, SynthConfig};
