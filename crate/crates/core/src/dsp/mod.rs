//! Resampling, Mexican-hat CWT and per-window tensors.

mod cache;
mod norm;
mod resample;
mod tensor;
mod wavelet;

pub use cache::{
    read_tensor_cache, write_tensor_cache, TensorCache, TensorCacheWriter, CACHE_MAGIC,
};
pub use norm::{apply_norm, fit_norm_stats, NormStats, STD_FLOOR};
pub use resample::{
    anti_alias_taps, resample_2to1, resample_to_target, Resampled, ANTI_ALIAS_TAPS,
};
pub use tensor::{tensorize, Tensorizer, WindowLabel, WindowTensor};
pub use wavelet::{cwt_reference, cwt_window, mexican_hat, CwtPlan, ScaleBank};

use thiserror::Error;

/// Sample rate every recording is brought to before the CWT.
pub const TARGET_RATE_HZ: f64 = 128.0;
/// Samples per one-second window at [`TARGET_RATE_HZ`].
pub const WINDOW_LEN: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("empty signal")]
    EmptySignal,
    #[error("window length {0}, expected {WINDOW_LEN}")]
    BadLength(usize),
    #[error("recording has {0} samples, fewer than one {WINDOW_LEN}-sample window")]
    TooShort(usize),
    #[error("no tensors to fit statistics on")]
    EmptyInput,
    #[error("unsupported sample rate {0} Hz (need 128 · 2^k)")]
    UnsupportedRate(f64),
    #[error("invalid scale bank: {0}")]
    BadScales(String),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor cache: {0}")]
    BadCache(String),
}
