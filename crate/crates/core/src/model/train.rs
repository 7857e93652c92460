use super::net::{self, Batch};
use super::{
    embed_many, loss_and_gradients, update_running_stats, AdamState, ArchitectureSpec, HeadKind,
    ModelError, ModelParams, Params,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One training example borrowing window data owned elsewhere.
#[derive(Debug, Clone, Copy)]
pub enum Sample<'a> {
    Pair {
        a: &'a [f32],
        b: &'a [f32],
        similar: bool,
    },
    Window {
        x: &'a [f32],
        preictal: bool,
    },
}

impl Sample<'_> {
    fn target(&self) -> f32 {
        match *self {
            Sample::Pair { similar, .. } => similar as u8 as f32,
            Sample::Window { preictal, .. } => preictal as u8 as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    /// Epochs without a new best validation loss before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Apply dropout during training.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            lr: 1e-3,
            early_stop_patience: 10,
            seed: 0,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(ModelError::BadConfig(
                "batch size and patience must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ModelError::BadConfig(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 0 is the untrained starting point.
    pub epoch: usize,
    /// `None` for the untrained starting point.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    /// Set when a non-finite loss or weight stopped training.
    pub diverged: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for r in &self.epochs {
            let train = r.train_loss.map(|l| l.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{train},{},{}\n",
                r.epoch, r.val_loss, r.val_accuracy
            ));
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: History,
}

/// True when a prediction sits exactly on the wrong extreme, where the
/// unclamped cross-entropy is infinite. The clamp keeps the reported loss
/// finite, so this is how a blown-up step shows itself.
fn saturated_wrong(probs: &[f32], batch: &Batch<'_, f32>) -> bool {
    let (Batch::Pairs { y, .. } | Batch::Windows { y, .. }) = batch;
    probs.iter().zip(y).any(|(p, y)| (p - y).abs() >= 1.0)
}

fn make_batch<'a>(samples: &[Sample<'a>], idx: &[usize]) -> Result<Batch<'a, f32>, ModelError> {
    match samples[idx[0]] {
        Sample::Pair { .. } => {
            let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
            for &i in idx {
                let Sample::Pair { a: xa, b: xb, .. } = samples[i] else {
                    return Err(ModelError::ShapeMismatch(
                        "pairs and windows mixed in one set".into(),
                    ));
                };
                a.push(xa);
                b.push(xb);
                y.push(samples[i].target());
            }
            Ok(Batch::Pairs { a, b, y })
        }
        Sample::Window { .. } => {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for &i in idx {
                let Sample::Window { x: xi, .. } = samples[i] else {
                    return Err(ModelError::ShapeMismatch(
                        "pairs and windows mixed in one set".into(),
                    ));
                };
                x.push(xi);
                y.push(samples[i].target());
            }
            Ok(Batch::Windows { x, y })
        }
    }
}

/// Inference-mode mean BCE and accuracy at threshold 0.5.
pub fn evaluate(p: &ModelParams, samples: &[Sample<'_>]) -> Result<(f64, f64), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyData("evaluation"));
    }
    let probs: Vec<f32> = match samples[0] {
        Sample::Pair { .. } => {
            let mut xs = Vec::with_capacity(2 * samples.len());
            for s in samples {
                match *s {
                    Sample::Pair { a, b, .. } => xs.extend([a, b]),
                    Sample::Window { .. } => {
                        return Err(ModelError::ShapeMismatch(
                            "pairs and windows mixed in one set".into(),
                        ))
                    }
                }
            }
            let emb = embed_many(p, &xs)?;
            emb.chunks_exact(2)
                .map(|e| super::similarity_from_embeddings(p, &e[0], &e[1]))
                .collect::<Result<_, _>>()?
        }
        Sample::Window { .. } => {
            let xs = samples
                .iter()
                .map(|s| match *s {
                    Sample::Window { x, .. } => Ok(x),
                    Sample::Pair { .. } => Err(ModelError::ShapeMismatch(
                        "pairs and windows mixed in one set".into(),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?;
            super::classify_many(p, &xs)?
        }
    };
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for (q, s) in probs.iter().zip(samples) {
        let y = s.target() as f64;
        loss += net::bce_loss(*q as f64, y);
        correct += (((*q > 0.5) as u8 as f64) == y) as usize;
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn check_head(spec: &ArchitectureSpec, sample: &Sample<'_>) -> Result<(), ModelError> {
    match (sample, &spec.head) {
        (Sample::Pair { .. }, HeadKind::Siamese { .. })
        | (Sample::Window { .. }, HeadKind::Classifier) => Ok(()),
        (Sample::Pair { .. }, _) => Err(ModelError::WrongHead("pairs need a siamese head")),
        (Sample::Window { .. }, _) => Err(ModelError::WrongHead("windows need a classifier head")),
    }
}

/// Trains freshly initialized weights (seeded from `cfg.seed`).
///
/// Minibatch Adam with a per-epoch seeded shuffle; stops after
/// `early_stop_patience` epochs without a lower validation loss and returns
/// the weights of the best epoch.
pub fn train(
    spec: &ArchitectureSpec,
    train_set: &[Sample<'_>],
    val_set: &[Sample<'_>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    let init = Params::init(spec, cfg.seed)?;
    train_from(init, train_set, val_set, cfg)
}

/// Continues training `pretrained` at a tenth of `cfg.lr`.
pub fn fine_tune(
    pretrained: &ModelParams,
    spec: &ArchitectureSpec,
    train_set: &[Sample<'_>],
    val_set: &[Sample<'_>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if pretrained.fingerprint() != spec.fingerprint() {
        return Err(ModelError::FingerprintMismatch {
            expected: spec.fingerprint(),
            found: pretrained.fingerprint(),
        });
    }
    let cfg = TrainConfig {
        lr: cfg.lr / 10.0,
        ..cfg.clone()
    };
    train_from(pretrained.clone(), train_set, val_set, &cfg)
}

/// Training samples used to re-estimate batch-norm statistics.
const RECALIBRATION_SAMPLES: usize = 1024;

/// Replaces the running batch-norm statistics with population estimates
/// taken with dropout off. Running averages collected under dropout
/// overstate activation variance, and the mismatch compounds through the
/// conv stack until inference outputs collapse to one class.
fn recalibrate_batch_norm(
    params: &mut ModelParams,
    train_set: &[Sample<'_>],
    batch_size: usize,
) -> Result<(), ModelError> {
    let n = train_set.len().min(RECALIBRATION_SAMPLES);
    let idx: Vec<usize> = (0..n).collect();
    let mut sums: Option<Vec<(Vec<f64>, Vec<f64>)>> = None;
    let mut batches = 0usize;
    for chunk in idx.chunks(batch_size) {
        let stats = net::batch_norm_statistics(params, &make_batch(train_set, chunk)?)?;
        let acc = sums.get_or_insert_with(|| {
            stats
                .iter()
                .map(|s| (vec![0.0; s.mean.len()], vec![0.0; s.mean.len()]))
                .collect()
        });
        for ((m, v), s) in acc.iter_mut().zip(&stats) {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            for ch in 0..m.len() {
                m[ch] += s.mean[ch] as f64;
                v[ch] += s.var[ch] as f64 * unbias;
            }
        }
        batches += 1;
    }
    if let Some(acc) = sums {
        for (bn, (m, v)) in params.bns.iter_mut().zip(acc) {
            for ch in 0..m.len() {
                bn.running_mean[ch] = (m[ch] / batches as f64) as f32;
                bn.running_var[ch] = (v[ch] / batches as f64) as f32;
            }
        }
    }
    Ok(())
}

fn train_from(
    mut params: ModelParams,
    train_set: &[Sample<'_>],
    val_set: &[Sample<'_>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyData("training"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptyData("validation"));
    }
    for s in train_set.iter().chain(val_set) {
        check_head(&params.spec, s)?;
    }

    let (val_loss, val_accuracy) = evaluate(&params, val_set)?;
    if !val_loss.is_finite() {
        return Err(ModelError::Diverged { epoch: 0 });
    }
    let mut history = History {
        epochs: vec![EpochRecord {
            epoch: 0,
            train_loss: None,
            val_loss,
            val_accuracy,
        }],
        best_epoch: 0,
        diverged: false,
    };
    let mut best = params.clone();
    let mut best_loss = val_loss;
    let mut stale = 0usize;
    let mut adam = AdamState::<f32>::new(params.learnable().iter().map(|t| t.len()), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for idx in order.chunks(cfg.batch_size) {
            let batch = make_batch(train_set, idx)?;
            let dropout_seed = cfg.dropout.then(|| rng.random::<u64>());
            let out = loss_and_gradients(&params, &batch, dropout_seed)?;
            let loss = out.loss as f64;
            if !loss.is_finite() || saturated_wrong(&out.probs, &batch) {
                history.diverged = true;
                break 'epochs;
            }
            total += loss * idx.len() as f64;
            adam.apply(params.learnable_mut(), &out.grads)?;
            update_running_stats(&mut params, &out.bn_stats);
            if !params.is_finite() {
                history.diverged = true;
                break 'epochs;
            }
        }
        if cfg.dropout && params.spec.dropout_rate > 0.0 {
            recalibrate_batch_norm(&mut params, train_set, cfg.batch_size)?;
        }
        let (val_loss, val_accuracy) = evaluate(&params, val_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: Some(total / train_set.len() as f64),
            val_loss,
            val_accuracy,
        });
        if !val_loss.is_finite() {
            history.diverged = true;
            break;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if history.diverged {
        log::warn!(
            "training stopped on a non-finite value; returning epoch {}",
            history.best_epoch
        );
    }
    Ok(TrainOutcome {
        params: best,
        history,
    })
}
