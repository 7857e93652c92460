//! CNN embedding network, Siamese and classifier heads, training and weight
//! persistence.

mod adam;
mod net;
mod params;
mod persist;
mod spec;
mod train;


pub use adam::AdamState;
pub use net::{
    batch_norm_statistics, bce_loss, loss_and_gradients, update_running_stats, Batch, BnBatchStats,
    LossOutput, Mode, BN_EPS, BN_MOMENTUM, PRED_CLAMP,
};
pub use params::{BatchNorm, Conv, Dense, Grads, ModelParams, Params, Real};
pub use persist::{load_params, save_params, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use spec::{ArchitectureSpec, ConvSpec, HeadKind, CONV_LAYERS};
pub use train::{
    evaluate, fine_tune, train, EpochRecord, History, Sample, TrainConfig, TrainOutcome,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    BadSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("wrong head: {0}")]
    WrongHead(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty {0} set")]
    EmptyData(&'static str),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("architecture fingerprint {found:016x} does not match {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    VersionUnsupported(u32),
    #[error("weight file truncated: {0}")]
    TruncatedFile(String),
}

/// Windows per inference batch.
const INFER_CHUNK: usize = 64;

fn check_len<T>(p: &Params<T>, x: &[T]) -> Result<(), ModelError> {
    let want = p.spec.input_len();
    if x.len() != want {
        return Err(ModelError::ShapeMismatch(format!(
            "input of {} values, expected {want}",
            x.len()
        )));
    }
    Ok(())
}

/// Embedding of one `[c][time][scale]` window.
///
/// Train mode normalizes with the statistics of this single window and
/// applies dropout only when `dropout_seed` is given.
pub fn embed_forward<T: Real>(
    p: &Params<T>,
    x: &[T],
    mode: Mode,
    dropout_seed: Option<u64>,
) -> Result<Vec<T>, ModelError> {
    check_len(p, x)?;
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let (c, h, w) = p.spec.input;
    let (e, _) = net::embed_batch(p, net::stack(&[x], c, h * w), 1, mode, rng.as_mut(), false);
    Ok(e)
}

/// Inference-mode embeddings of many windows, batched for throughput.
pub fn embed_many<T: Real>(p: &Params<T>, xs: &[&[T]]) -> Result<Vec<Vec<T>>, ModelError> {
    for x in xs {
        check_len(p, x)?;
    }
    let (c, h, w) = p.spec.input;
    let e = p.spec.embed_dim;
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(INFER_CHUNK) {
        let (emb, _) = net::embed_batch(
            p,
            net::stack(chunk, c, h * w),
            chunk.len(),
            Mode::Infer,
            None,
            false,
        );
        out.extend(emb.chunks_exact(e).map(<[T]>::to_vec));
    }
    Ok(out)
}

/// `sigmoid(g(|ea − eb|))` for precomputed embeddings.
pub fn similarity_from_embeddings<T: Real>(
    p: &Params<T>,
    ea: &[T],
    eb: &[T],
) -> Result<T, ModelError> {
    if !matches!(p.spec.head, HeadKind::Siamese { .. }) {
        return Err(ModelError::WrongHead("similarity needs a siamese head"));
    }
    if ea.len() != p.spec.embed_dim || eb.len() != p.spec.embed_dim {
        return Err(ModelError::ShapeMismatch("embedding length".into()));
    }
    let diff: Vec<T> = ea.iter().zip(eb).map(|(&a, &b)| (a - b).abs()).collect();
    let (logit, _) = net::head_forward(p, diff, 1, None);
    Ok(net::sigmoid(logit[0]))
}

/// Similarity of two windows; symmetric in its arguments.
pub fn siamese_score<T: Real>(
    p: &Params<T>,
    xa: &[T],
    xb: &[T],
    mode: Mode,
) -> Result<T, ModelError> {
    if !matches!(p.spec.head, HeadKind::Siamese { .. }) {
        return Err(ModelError::WrongHead("similarity needs a siamese head"));
    }
    check_len(p, xa)?;
    check_len(p, xb)?;
    let (c, h, w) = p.spec.input;
    let e = p.spec.embed_dim;
    let emb = match mode {
        Mode::Train => {
            // One shared batch, stacked in a canonical order so the batch
            // statistics (and so the score) do not depend on argument order.
            let pair = if xa.partial_cmp(xb) == Some(std::cmp::Ordering::Greater) {
                [xb, xa]
            } else {
                [xa, xb]
            };
            net::embed_batch(p, net::stack(&pair, c, h * w), 2, mode, None, false).0
        }
        Mode::Infer => {
            let mut v = embed_forward(p, xa, mode, None)?;
            v.extend(embed_forward(p, xb, mode, None)?);
            v
        }
    };
    similarity_from_embeddings(p, &emb[..e], &emb[e..])
}

/// Preictal probability from the classifier head.
pub fn classify<T: Real>(p: &Params<T>, x: &[T], mode: Mode) -> Result<T, ModelError> {
    if p.spec.head != HeadKind::Classifier {
        return Err(ModelError::WrongHead("classify needs a classifier head"));
    }
    let e = embed_forward(p, x, mode, None)?;
    let (logit, _) = net::head_forward(p, e, 1, None);
    Ok(net::sigmoid(logit[0]))
}

/// Inference-mode preictal probabilities for many windows.
pub fn classify_many<T: Real>(p: &Params<T>, xs: &[&[T]]) -> Result<Vec<T>, ModelError> {
    if p.spec.head != HeadKind::Classifier {
        return Err(ModelError::WrongHead("classify needs a classifier head"));
    }
    let embs = embed_many(p, xs)?;
    let flat: Vec<T> = embs.concat();
    let (logits, _) = net::head_forward(p, flat, xs.len(), None);
    Ok(logits.into_iter().map(net::sigmoid).collect())
}

/// Similarities of one embedding against several others, in one head pass.
pub fn similarity_to_many<T: Real>(
    p: &Params<T>,
    e: &[T],
    others: &[Vec<T>],
) -> Result<Vec<T>, ModelError> {
    if !matches!(p.spec.head, HeadKind::Siamese { .. }) {
        return Err(ModelError::WrongHead("similarity needs a siamese head"));
    }
    let d = p.spec.embed_dim;
    if e.len() != d || others.iter().any(|o| o.len() != d) {
        return Err(ModelError::ShapeMismatch("embedding length".into()));
    }
    if others.is_empty() {
        return Ok(Vec::new());
    }
    let diff: Vec<T> = others
        .iter()
        .flat_map(|o| o.iter().zip(e).map(|(&b, &a)| (a - b).abs()))
        .collect();
    let (logits, _) = net::head_forward(p, diff, others.len(), None);
    Ok(logits.into_iter().map(net::sigmoid).collect())
}
