use super::{SegmentError, SegmentStore};
use crate::dsp::{WindowLabel, WindowTensor, WINDOW_LEN};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub a: Arc<WindowTensor>,
    pub b: Arc<WindowTensor>,
    pub similar: bool,
}

impl PairExample {
    /// Labels the pair from its windows: similar iff both are interictal or
    /// both belong to the preictal class.
    pub fn new(a: Arc<WindowTensor>, b: Arc<WindowTensor>) -> Self {
        let similar = a.label.is_preictal_class() == b.label.is_preictal_class();
        Self { a, b, similar }
    }
}

/// `i < j` for the `k`-th unordered pair of `0..n` in row-major order.
fn unordered_pair(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}

fn draw(
    rng: &mut ChaCha8Rng,
    stratum: &'static str,
    available: usize,
    requested: usize,
) -> Result<Vec<usize>, SegmentError> {
    if requested > available {
        return Err(SegmentError::Exhausted {
            stratum,
            requested,
            available,
        });
    }
    let mut v = index::sample(rng, available, requested).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Half similar pairs (split between interictal-interictal and
/// preictal-preictal, with any odd one going to the latter) and half
/// interictal-preictal pairs, each drawn without repeating an unordered
/// pair, then shuffled.
pub fn make_pairs(
    store: &SegmentStore,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<PairExample>, SegmentError> {
    if !n_pairs.is_multiple_of(2) {
        return Err(SegmentError::OddPairCount(n_pairs));
    }
    let (ni, np) = (store.interictal.len(), store.preictal.len());
    let fewest = ni.min(np);
    if fewest < 2 {
        return Err(SegmentError::TooFew {
            needed: 2,
            available: fewest,
        });
    }
    let similar = n_pairs / 2;
    let n_ii = similar / 2;
    let n_pp = similar - n_ii;
    let n_ip = n_pairs / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ii = draw(&mut rng, "interictal-interictal", ni * (ni - 1) / 2, n_ii)?;
    let pp = draw(&mut rng, "preictal-preictal", np * (np - 1) / 2, n_pp)?;
    let ip = draw(&mut rng, "interictal-preictal", ni * np, n_ip)?;

    let mut out = Vec::with_capacity(n_pairs);
    for k in ii {
        let (i, j) = unordered_pair(ni, k);
        out.push(PairExample::new(
            store.interictal[i].clone(),
            store.interictal[j].clone(),
        ));
    }
    for k in pp {
        let (i, j) = unordered_pair(np, k);
        out.push(PairExample::new(
            store.preictal[i].clone(),
            store.preictal[j].clone(),
        ));
    }
    for k in ip {
        out.push(PairExample::new(
            store.interictal[k / np].clone(),
            store.preictal[k % np].clone(),
        ));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Seeded shuffle, then the first `⌊n·fraction⌋` items train and the rest
/// validate (each side keeps at least one item).
pub fn split_train_val<T>(
    mut items: Vec<T>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), SegmentError> {
    if items.len() < 2 {
        return Err(SegmentError::TooFew {
            needed: 2,
            available: items.len(),
        });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SegmentError::InvalidConfig(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let n = items.len();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the epsilon keeps 0.85·1000 from landing a hair below 850
    let n_train = ((n as f64 * fraction + 1e-9).floor() as usize).clamp(1, n - 1);
    let val = items.split_off(n_train);
    Ok((items, val))
}

/// `k` interictal and `k` preictal windows scored against during replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub interictal: Vec<Arc<WindowTensor>>,
    pub preictal: Vec<Arc<WindowTensor>>,
    pub k: usize,
}

impl SupportSet {
    /// Recording ids the support windows came from.
    pub fn sources(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .interictal
            .iter()
            .chain(&self.preictal)
            .map(|w| w.source.to_string())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Uniform sample of `k` windows from each store, without replacement.
pub fn select_support(
    store: &SegmentStore,
    k: usize,
    seed: u64,
) -> Result<SupportSet, SegmentError> {
    let fewest = store.interictal.len().min(store.preictal.len());
    if k == 0 || fewest < k {
        return Err(SegmentError::TooFew {
            needed: k.max(1),
            available: fewest,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |v: &[Arc<WindowTensor>]| -> Vec<Arc<WindowTensor>> {
        index::sample(&mut rng, v.len(), k)
            .into_iter()
            .map(|i| v[i].clone())
            .collect()
    };
    let interictal = pick(&store.interictal);
    let preictal = pick(&store.preictal);
    Ok(SupportSet {
        interictal,
        preictal,
        k,
    })
}

pub const SUPPORT_MAGIC: &[u8; 4] = b"ICS1";

/// `ICS1`, then `(k, channels, scales)` as u32, then for every window
/// (interictal first): label byte, start time f64, source id (u16 length +
/// UTF-8), values as f32. Little-endian throughout.
pub fn write_support(s: &SupportSet) -> Vec<u8> {
    let first = s.interictal.first().or(s.preictal.first());
    let (channels, scales) = first.map_or((0, 0), |w| (w.channels, w.scales));
    let mut out = Vec::new();
    out.extend_from_slice(SUPPORT_MAGIC);
    for v in [s.k, channels, scales] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for w in s.interictal.iter().chain(&s.preictal) {
        out.push(match w.label {
            WindowLabel::Interictal => 0,
            WindowLabel::Preictal => 1,
            WindowLabel::Ictal => 2,
            WindowLabel::Unlabeled => 3,
        });
        out.extend_from_slice(&w.t_start_s.to_le_bytes());
        out.extend_from_slice(&(w.source.len() as u16).to_le_bytes());
        out.extend_from_slice(w.source.as_bytes());
        for v in &w.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_support(bytes: &[u8]) -> Result<SupportSet, SegmentError> {
    let bad = |m: &str| SegmentError::BadSupportFile(m.to_string());
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], SegmentError> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated"))?;
        at += n;
        Ok(s)
    };
    if take(4)? != SUPPORT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = || -> Result<usize, SegmentError> {
        Ok(u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize)
    };
    let (k, channels, scales) = (word()?, word()?, word()?);
    let per = channels * WINDOW_LEN * scales;
    let mut windows = Vec::with_capacity(2 * k);
    for _ in 0..2 * k {
        let label = match take(1)?[0] {
            0 => WindowLabel::Interictal,
            1 => WindowLabel::Preictal,
            2 => WindowLabel::Ictal,
            3 => WindowLabel::Unlabeled,
            _ => return Err(bad("unknown label")),
        };
        let t_start_s = f64::from_le_bytes(take(8)?.try_into().expect("8"));
        let len = u16::from_le_bytes(take(2)?.try_into().expect("2")) as usize;
        let source = std::str::from_utf8(take(len)?).map_err(|_| bad("source id is not UTF-8"))?;
        let source: Arc<str> = Arc::from(source);
        let values = take(4 * per)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut w = WindowTensor::new(values, channels, scales).map_err(|e| bad(&e.to_string()))?;
        w.t_start_s = t_start_s;
        w.label = label;
        w.source = source;
        windows.push(Arc::new(w));
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let preictal = windows.split_off(k);
    Ok(SupportSet {
        interictal: windows,
        preictal,
        k,
    })
}
