//! Forward and reverse passes of the embedding CNN and both heads.
//!
//! Activations are laid out channel-major across the batch, `(C, B, H, W)`,
//! so one GEMM per conv layer covers the whole batch and batch-norm
//! statistics are contiguous per channel.

use super::params::{matmul, Dense, Grads, Mat, Params, Real};
use super::{HeadKind, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout when a seed is given.
    Train,
    /// Running statistics; dropout is the identity.
    Infer,
}

/// Per-batch-norm-layer batch mean and biased variance, plus the element
/// count they were computed over.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

struct ConvBlockCache<T> {
    input: Vec<T>,
    in_shape: (usize, usize, usize),
    conv_hw: (usize, usize),
    xhat: Vec<T>,
    inv_std: Vec<T>,
    relu_on: Vec<bool>,
    pool_idx: Option<Vec<usize>>,
    drop_mask: Option<Vec<T>>,
    stats: BnBatchStats<T>,
}

struct DenseCache<T> {
    input: Vec<T>,
    relu_on: Option<Vec<bool>>,
    drop_mask: Option<Vec<T>>,
}

pub(crate) struct EmbedCache<T> {
    batch: usize,
    mode: Mode,
    blocks: Vec<ConvBlockCache<T>>,
    last_shape: (usize, usize, usize),
    dense: DenseCache<T>,
}

pub(crate) struct HeadCache<T> {
    layers: Vec<DenseCache<T>>,
}

/// Stacks `[c][h][w]` samples into `(C, B, H, W)`.
pub(crate) fn stack<T: Real>(samples: &[&[T]], channels: usize, plane: usize) -> Vec<T> {
    let b = samples.len();
    let mut out = vec![T::zero(); channels * b * plane];
    for (bi, s) in samples.iter().enumerate() {
        for c in 0..channels {
            out[(c * b + bi) * plane..(c * b + bi + 1) * plane]
                .copy_from_slice(&s[c * plane..(c + 1) * plane]);
        }
    }
    out
}

/// Geometry of one conv layer over a `(C, B, H, W)` activation.
#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    batch: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column `ow·stride + kj − pad`
    /// falls inside `0..w`.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (w, stride, pad) = (self.w, self.stride, self.pad);
        let lo = pad.saturating_sub(kj).div_ceil(stride);
        let hi = if w + pad < kj + 1 {
            0
        } else {
            ((w + pad - kj - 1) / stride + 1).min(self.wo)
        };
        (lo.min(hi), hi)
    }

    /// Input row feeding output row `oh` through kernel row `ki`.
    fn in_row(&self, oh: usize, ki: usize) -> Option<usize> {
        (oh * self.stride + ki)
            .checked_sub(self.pad)
            .filter(|&r| r < self.h)
    }
}

/// Unfolded-buffer budget in elements; chosen so the buffer stays in L2.
const COLS_BUDGET: usize = 1 << 18;

/// Unfolds samples `b0..b0 + cb` into `cols`, a `kdim × cb·ho·wo` matrix.
fn im2col_chunk<T: Real>(g: &ConvGeom, x: &[T], b0: usize, cb: usize, cols: &mut [T]) {
    let (h, w, wo) = (g.h, g.w, g.wo);
    let p = g.out_plane();
    let ld = cb * p;
    cols.fill(T::zero());
    for ci in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut cols[((ci * g.k + ki) * g.k + kj) * ld..][..ld];
                let (lo, hi) = g.valid_cols(kj);
                for lb in 0..cb {
                    let plane = &x[(ci * g.batch + b0 + lb) * h * w..][..h * w];
                    for oh in 0..g.ho {
                        let Some(ih) = g.in_row(oh, ki) else { continue };
                        let dst = &mut row[lb * p + oh * wo..][..wo];
                        let src = &plane[ih * w..][..w];
                        if g.stride == 1 {
                            let off = lo + kj - g.pad;
                            dst[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        } else {
                            for ow in lo..hi {
                                dst[ow] = src[ow * g.stride + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_chunk<T: Real>(g: &ConvGeom, cols: &[T], b0: usize, cb: usize, dx: &mut [T]) {
    let (h, w, wo) = (g.h, g.w, g.wo);
    let p = g.out_plane();
    let ld = cb * p;
    for ci in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &cols[((ci * g.k + ki) * g.k + kj) * ld..][..ld];
                let (lo, hi) = g.valid_cols(kj);
                for lb in 0..cb {
                    let plane = &mut dx[(ci * g.batch + b0 + lb) * h * w..][..h * w];
                    for oh in 0..g.ho {
                        let Some(ih) = g.in_row(oh, ki) else { continue };
                        let src = &row[lb * p + oh * wo..][..wo];
                        let dst = &mut plane[ih * w..][..w];
                        for (ow, &s) in src.iter().enumerate().take(hi).skip(lo) {
                            let at = ow * g.stride + kj - g.pad;
                            dst[at] = dst[at] + s;
                        }
                    }
                }
            }
        }
    }
}

/// `c ← a·b + beta·c` on strided views, bounds-checked.
#[allow(clippy::too_many_arguments)]
fn gemm_view<T: Real>(
    (m, k, n): (usize, usize, usize),
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    (rsc, csc): (usize, usize),
    beta: T,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cc: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || last(m, rsa, k, csa) < a.len());
    assert!(k == 0 || last(k, rsb, n, csb) < b.len());
    assert!(last(m, rsc, n, csc) < c.len());
    // SAFETY: every strided view was bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        )
    }
}

/// Samples per unfolded chunk.
fn chunk_len(g: &ConvGeom) -> usize {
    (COLS_BUDGET / (g.kdim() * g.out_plane()).max(1)).clamp(1, g.batch.max(1))
}

/// Convolution of a whole batch in chunks of samples, so the unfolded
/// buffer stays cache-resident. Returns `(Cout, B, ho, wo)` without bias.
fn conv_forward<T: Real>(g: &ConvGeom, weights: &[T], cout: usize, x: &[T]) -> Vec<T> {
    let p = g.out_plane();
    let n = g.batch * p;
    let kdim = g.kdim();
    let chunk = chunk_len(g);
    let mut z = vec![T::zero(); cout * n];
    let mut cols = vec![T::zero(); kdim * p * chunk];
    for b0 in (0..g.batch).step_by(chunk) {
        let cb = chunk.min(g.batch - b0);
        let cols = &mut cols[..kdim * cb * p];
        im2col_chunk(g, x, b0, cb, cols);
        gemm_view(
            (cout, kdim, cb * p),
            weights,
            (kdim, 1),
            cols,
            (cb * p, 1),
            &mut z[b0 * p..],
            (n, 1),
            T::zero(),
        );
    }
    z
}

/// Accumulates the weight gradient and, when `want_dx`, returns the input
/// gradient.
fn conv_backward<T: Real>(
    g: &ConvGeom,
    weights: &[T],
    cout: usize,
    x: &[T],
    dz: &[T],
    gw: &mut [T],
    want_dx: bool,
) -> Vec<T> {
    let p = g.out_plane();
    let n = g.batch * p;
    let kdim = g.kdim();
    let chunk = chunk_len(g);
    let mut cols = vec![T::zero(); kdim * p * chunk];
    let mut dcols = vec![T::zero(); if want_dx { kdim * p * chunk } else { 0 }];
    let mut dx = vec![
        T::zero();
        if want_dx {
            g.cin * g.batch * g.h * g.w
        } else {
            0
        }
    ];
    for b0 in (0..g.batch).step_by(chunk) {
        let cb = chunk.min(g.batch - b0);
        let m = cb * p;
        let dzb = &dz[b0 * p..];
        let cols = &mut cols[..kdim * m];
        im2col_chunk(g, x, b0, cb, cols);
        gemm_view(
            (cout, m, kdim),
            dzb,
            (n, 1),
            cols,
            (1, m),
            gw,
            (kdim, 1),
            T::one(),
        );
        if want_dx {
            let dcols = &mut dcols[..kdim * m];
            gemm_view(
                (kdim, cout, m),
                weights,
                (1, kdim),
                dzb,
                (n, 1),
                dcols,
                (m, 1),
                T::zero(),
            );
            col2im_chunk(g, dcols, b0, cb, &mut dx);
        }
    }
    dx
}

fn dropout_mask<T: Real>(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let cut = (rate * 4_294_967_296.0) as u64;
    Some(
        (0..len)
            .map(|_| {
                if (rng.random::<u32>() as u64) < cut {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect(),
    )
}

/// Mask for `groups` blocks of `batch` items of `inner` values each. When
/// `tied`, the batch is two stacked halves and the second half reuses the
/// first half's draws, so both sides of a pair pass through the same thinned
/// network.
pub(crate) fn batch_dropout_mask<T: Real>(
    groups: usize,
    batch: usize,
    inner: usize,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
    tied: bool,
) -> Option<Vec<T>> {
    if !tied {
        return dropout_mask(groups * batch * inner, rate, rng);
    }
    let half = batch / 2;
    let m = dropout_mask::<T>(groups * half * inner, rate, rng)?;
    let mut out = Vec::with_capacity(groups * batch * inner);
    for row in m.chunks_exact(half * inner) {
        out.extend_from_slice(row);
        out.extend_from_slice(row);
    }
    Some(out)
}

fn dense_forward<T: Real>(d: &Dense<T>, x: &[T], batch: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * d.n_out];
    matmul(
        Mat::new(x, batch, d.n_in),
        Mat::new(&d.w, d.n_out, d.n_in).t(),
        &mut out,
        false,
    );
    for row in out.chunks_exact_mut(d.n_out) {
        for (v, &b) in row.iter_mut().zip(&d.b) {
            *v = *v + b;
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn dense_backward<T: Real>(
    d: &Dense<T>,
    input: &[T],
    dout: &[T],
    batch: usize,
    gw: &mut [T],
    gb: &mut [T],
) -> Vec<T> {
    matmul(
        Mat::new(dout, batch, d.n_out).t(),
        Mat::new(input, batch, d.n_in),
        gw,
        true,
    );
    for row in dout.chunks_exact(d.n_out) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    let mut dx = vec![T::zero(); batch * d.n_in];
    matmul(
        Mat::new(dout, batch, d.n_out),
        Mat::new(&d.w, d.n_out, d.n_in),
        &mut dx,
        false,
    );
    dx
}

/// Runs the embedding network on `x` laid out `(C, B, H, W)`.
pub(crate) fn embed_batch<T: Real>(
    p: &Params<T>,
    x: Vec<T>,
    batch: usize,
    mode: Mode,
    mut rng: Option<&mut ChaCha8Rng>,
    tied: bool,
) -> (Vec<T>, EmbedCache<T>) {
    let spec = &p.spec;
    let (mut c, mut h, mut w) = spec.input;
    let eps = T::lit(BN_EPS);
    let mut act = x;
    let mut blocks = Vec::with_capacity(p.convs.len());
    for (i, ((conv, bn), cs)) in p
        .convs
        .iter()
        .zip(&p.bns)
        .zip(&spec.conv_layers)
        .enumerate()
    {
        let (k, s, pad) = (cs.kernel, cs.stride, cs.padding);
        let ho = (h + 2 * pad - k) / s + 1;
        let wo = (w + 2 * pad - k) / s + 1;
        let n = batch * ho * wo;
        let geom = ConvGeom {
            cin: c,
            batch,
            h,
            w,
            k,
            stride: s,
            pad,
            ho,
            wo,
        };
        let cout = cs.filters;
        let mut z = conv_forward(&geom, &conv.w, cout, &act);

        // batch norm, in place: z becomes xhat
        let mut stats = BnBatchStats {
            mean: vec![T::zero(); cout],
            var: vec![T::zero(); cout],
            count: n,
        };
        let mut inv_std = vec![T::zero(); cout];
        let mut y = vec![T::zero(); cout * n];
        for ch in 0..cout {
            let row = &mut z[ch * n..(ch + 1) * n];
            let bias = conv.b[ch];
            row.iter_mut().for_each(|v| *v = *v + bias);
            let (mean, var) = match mode {
                Mode::Train => {
                    let nn = T::from_usize(n).expect("count");
                    let mean = row.iter().copied().sum::<T>() / nn;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
                    (mean, var)
                }
                Mode::Infer => (bn.running_mean[ch], bn.running_var[ch]),
            };
            stats.mean[ch] = mean;
            stats.var[ch] = var;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            let (g, b) = (bn.gamma[ch], bn.beta[ch]);
            for (v, out) in row.iter_mut().zip(&mut y[ch * n..(ch + 1) * n]) {
                *v = (*v - mean) * is;
                *out = g * *v + b;
            }
        }
        let relu_on: Vec<bool> = y.iter().map(|&v| v > T::zero()).collect();
        y.iter_mut().for_each(|v| *v = v.max(T::zero()));

        let (mut oh, mut ow) = (ho, wo);
        let pool_idx = if spec.pool_after.contains(&(i + 1)) {
            let (ph, pw) = (ho / 2, wo / 2);
            let mut pooled = vec![T::zero(); cout * batch * ph * pw];
            let mut idx = vec![0usize; pooled.len()];
            for plane in 0..cout * batch {
                let src = plane * ho * wo;
                for r in 0..ph {
                    for q in 0..pw {
                        let mut best = src + 2 * r * wo + 2 * q;
                        for (dr, dq) in [(0, 1), (1, 0), (1, 1)] {
                            let cand = src + (2 * r + dr) * wo + 2 * q + dq;
                            if y[cand] > y[best] {
                                best = cand;
                            }
                        }
                        let o = (plane * ph + r) * pw + q;
                        pooled[o] = y[best];
                        idx[o] = best;
                    }
                }
            }
            y = pooled;
            oh = ph;
            ow = pw;
            Some(idx)
        } else {
            None
        };

        let drop_mask = batch_dropout_mask::<T>(
            cout,
            batch,
            oh * ow,
            spec.dropout_rate,
            rng.as_deref_mut(),
            tied,
        );
        if let Some(m) = &drop_mask {
            y.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
        }
        blocks.push(ConvBlockCache {
            input: act,
            in_shape: (c, h, w),
            conv_hw: (ho, wo),
            xhat: z,
            inv_std,
            relu_on,
            pool_idx,
            drop_mask,
            stats,
        });
        act = y;
        c = cout;
        h = oh;
        w = ow;
    }

    // flatten (C, B, H, W) → (B, C·H·W)
    let plane = h * w;
    let feat = c * plane;
    let mut flat = vec![T::zero(); batch * feat];
    for ch in 0..c {
        for bi in 0..batch {
            flat[bi * feat + ch * plane..bi * feat + (ch + 1) * plane]
                .copy_from_slice(&act[(ch * batch + bi) * plane..(ch * batch + bi + 1) * plane]);
        }
    }
    let mut e = dense_forward(&p.embed, &flat, batch);
    let relu_on: Vec<bool> = e.iter().map(|&v| v > T::zero()).collect();
    e.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let drop_mask = batch_dropout_mask::<T>(1, batch, spec.embed_dim, spec.dropout_rate, rng, tied);
    if let Some(m) = &drop_mask {
        e.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
    }
    let cache = EmbedCache {
        batch,
        mode,
        blocks,
        last_shape: (c, h, w),
        dense: DenseCache {
            input: flat,
            relu_on: Some(relu_on),
            drop_mask,
        },
    };
    (e, cache)
}

pub(crate) fn embed_backward<T: Real>(
    p: &Params<T>,
    cache: EmbedCache<T>,
    d_embed: Vec<T>,
    grads: &mut Grads<T>,
) {
    let batch = cache.batch;
    let nconv = p.convs.len();
    let (gi_w, gi_b) = (4 * nconv, 4 * nconv + 1);

    let mut de = d_embed;
    if let Some(m) = &cache.dense.drop_mask {
        de.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
    }
    if let Some(on) = &cache.dense.relu_on {
        de.iter_mut().zip(on).for_each(|(v, &o)| {
            if !o {
                *v = T::zero()
            }
        });
    }
    let (gw, rest) = grads.split_at_mut(gi_b);
    let dflat = dense_backward(
        &p.embed,
        &cache.dense.input,
        &de,
        batch,
        &mut gw[gi_w],
        &mut rest[0],
    );

    // unflatten (B, C·H·W) → (C, B, H, W)
    let (c, h, w) = cache.last_shape;
    let plane = h * w;
    let feat = c * plane;
    let mut dact = vec![T::zero(); c * batch * plane];
    for ch in 0..c {
        for bi in 0..batch {
            dact[(ch * batch + bi) * plane..(ch * batch + bi + 1) * plane]
                .copy_from_slice(&dflat[bi * feat + ch * plane..bi * feat + (ch + 1) * plane]);
        }
    }

    for (i, blk) in cache.blocks.into_iter().enumerate().rev() {
        let cs = p.spec.conv_layers[i];
        let conv = &p.convs[i];
        let bn = &p.bns[i];
        let cout = cs.filters;
        let (ho, wo) = blk.conv_hw;
        let n = batch * ho * wo;

        if let Some(m) = &blk.drop_mask {
            dact.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
        }
        let mut dy = match &blk.pool_idx {
            Some(idx) => {
                let mut full = vec![T::zero(); cout * n];
                for (&j, &g) in idx.iter().zip(&dact) {
                    full[j] = full[j] + g;
                }
                full
            }
            None => dact,
        };
        dy.iter_mut().zip(&blk.relu_on).for_each(|(v, &o)| {
            if !o {
                *v = T::zero()
            }
        });

        // batch norm backward; dy becomes dz
        let nn = T::from_usize(n).expect("count");
        let base = 4 * i;
        for ch in 0..cout {
            let row = &mut dy[ch * n..(ch + 1) * n];
            let xhat = &blk.xhat[ch * n..(ch + 1) * n];
            let dgamma: T = row.iter().zip(xhat).map(|(&d, &x)| d * x).sum();
            let dbeta: T = row.iter().copied().sum();
            grads[base + 2][ch] = grads[base + 2][ch] + dgamma;
            grads[base + 3][ch] = grads[base + 3][ch] + dbeta;
            let g = bn.gamma[ch];
            let is = blk.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    // dxhat = g·dy; dz = is/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let sum_dxhat = g * dbeta;
                    let sum_dxhat_xhat = g * dgamma;
                    for (d, &x) in row.iter_mut().zip(xhat) {
                        *d = is / nn * (nn * g * *d - sum_dxhat - x * sum_dxhat_xhat);
                    }
                }
                Mode::Infer => row.iter_mut().for_each(|d| *d = *d * g * is),
            }
            let dbias: T = row.iter().copied().sum();
            grads[base + 1][ch] = grads[base + 1][ch] + dbias;
        }

        let (cin, h, w) = blk.in_shape;
        let geom = ConvGeom {
            cin,
            batch,
            h,
            w,
            k: cs.kernel,
            stride: cs.stride,
            pad: cs.padding,
            ho,
            wo,
        };
        dact = conv_backward(
            &geom,
            &conv.w,
            cout,
            &blk.input,
            &dy,
            &mut grads[base],
            i > 0,
        );
    }
}

pub(crate) fn bn_stats<T: Real>(cache: &EmbedCache<T>) -> Vec<BnBatchStats<T>> {
    cache.blocks.iter().map(|b| b.stats.clone()).collect()
}

/// Head on `(B, D)` inputs; returns one logit per row.
pub(crate) fn head_forward<T: Real>(
    p: &Params<T>,
    input: Vec<T>,
    batch: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<T>, HeadCache<T>) {
    let mut layers = Vec::with_capacity(p.head.len());
    let mut act = input;
    let last = p.head.len() - 1;
    for (i, d) in p.head.iter().enumerate() {
        let mut out = dense_forward(d, &act, batch);
        let (relu_on, drop_mask) = if i < last {
            let on: Vec<bool> = out.iter().map(|&v| v > T::zero()).collect();
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let m = dropout_mask::<T>(out.len(), p.spec.dropout_rate, rng.as_deref_mut());
            if let Some(m) = &m {
                out.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
            }
            (Some(on), m)
        } else {
            (None, None)
        };
        layers.push(DenseCache {
            input: act,
            relu_on,
            drop_mask,
        });
        act = out;
    }
    (act, HeadCache { layers })
}

pub(crate) fn head_backward<T: Real>(
    p: &Params<T>,
    cache: HeadCache<T>,
    dlogits: Vec<T>,
    batch: usize,
    grads: &mut Grads<T>,
) -> Vec<T> {
    let offset = 4 * p.convs.len() + 2;
    let mut d = dlogits;
    for (i, layer) in cache.layers.into_iter().enumerate().rev() {
        // d is the gradient wrt this layer's post-activation output
        if let Some(m) = &layer.drop_mask {
            d.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
        }
        if let Some(on) = &layer.relu_on {
            d.iter_mut().zip(on).for_each(|(v, &o)| {
                if !o {
                    *v = T::zero()
                }
            });
        }
        let (gw, gb) = grads.split_at_mut(offset + 2 * i + 1);
        d = dense_backward(
            &p.head[i],
            &layer.input,
            &d,
            batch,
            &mut gw[offset + 2 * i],
            &mut gb[0],
        );
    }
    d
}

pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub const PRED_CLAMP: f64 = 1e-7;

/// Binary cross-entropy with the prediction clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Real>(pred: T, label: T) -> T {
    let eps = T::lit(PRED_CLAMP);
    let p = pred.max(eps).min(T::one() - eps);
    -(label * p.ln() + (T::one() - label) * (T::one() - p).ln())
}

/// A labeled training batch of raw `[c][h][w]` samples.
pub enum Batch<'a, T> {
    /// Pairs with similarity targets (1 = similar).
    Pairs {
        a: Vec<&'a [T]>,
        b: Vec<&'a [T]>,
        y: Vec<T>,
    },
    /// Single windows with class targets (1 = preictal).
    Windows { x: Vec<&'a [T]>, y: Vec<T> },
}

impl<T> Batch<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pairs { y, .. } | Batch::Windows { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct LossOutput<T> {
    pub loss: T,
    pub grads: Grads<T>,
    pub probs: Vec<T>,
    pub bn_stats: Vec<BnBatchStats<T>>,
}

fn check_inputs<T: Real>(p: &Params<T>, xs: &[&[T]]) -> Result<(), ModelError> {
    let want = p.spec.input_len();
    if let Some(bad) = xs.iter().find(|x| x.len() != want) {
        return Err(ModelError::ShapeMismatch(format!(
            "sample of {} values, expected {want}",
            bad.len()
        )));
    }
    Ok(())
}

/// Mean batch BCE and its gradient with respect to every learnable tensor.
///
/// Batch norm runs in train mode; dropout is applied only when
/// `dropout_seed` is given. The logit gradient is `σ(z) − y`, the exact
/// derivative of the unclamped loss.
pub fn loss_and_gradients<T: Real>(
    p: &Params<T>,
    batch: &Batch<'_, T>,
    dropout_seed: Option<u64>,
) -> Result<LossOutput<T>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let (c, h, w) = p.spec.input;
    let mut grads = p.zero_grads();
    let n = batch.len();
    let nn = T::from_usize(n).expect("count");
    match batch {
        Batch::Pairs { a, b, y } => {
            if !matches!(p.spec.head, HeadKind::Siamese { .. }) {
                return Err(ModelError::WrongHead("pair batch needs a siamese head"));
            }
            if a.len() != n || b.len() != n {
                return Err(ModelError::ShapeMismatch(
                    "pair sides differ in length".into(),
                ));
            }
            check_inputs(p, a)?;
            check_inputs(p, b)?;
            let all: Vec<&[T]> = a.iter().chain(b.iter()).copied().collect();
            let x = stack(&all, c, h * w);
            let (emb, ecache) = embed_batch(p, x, 2 * n, Mode::Train, rng.as_mut(), true);
            let e = p.spec.embed_dim;
            let (ea, eb) = emb.split_at(n * e);
            let diff: Vec<T> = ea.iter().zip(eb).map(|(&u, &v)| (u - v).abs()).collect();
            let (logits, hcache) = head_forward(p, diff, n, rng.as_mut());
            let probs: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
            let loss = probs
                .iter()
                .zip(y)
                .map(|(&q, &t)| bce_loss(q, t))
                .sum::<T>()
                / nn;
            let dlogits: Vec<T> = probs.iter().zip(y).map(|(&q, &t)| (q - t) / nn).collect();
            let dd = head_backward(p, hcache, dlogits, n, &mut grads);
            let mut demb = vec![T::zero(); 2 * n * e];
            for j in 0..n * e {
                let s = (ea[j] - eb[j]).signum();
                let s = if ea[j] == eb[j] { T::zero() } else { s };
                demb[j] = dd[j] * s;
                demb[n * e + j] = -dd[j] * s;
            }
            let bn_stats = bn_stats(&ecache);
            embed_backward(p, ecache, demb, &mut grads);
            Ok(LossOutput {
                loss,
                grads,
                probs,
                bn_stats,
            })
        }
        Batch::Windows { x, y } => {
            if p.spec.head != HeadKind::Classifier {
                return Err(ModelError::WrongHead(
                    "window batch needs a classifier head",
                ));
            }
            if x.len() != n {
                return Err(ModelError::ShapeMismatch(
                    "inputs and targets differ in length".into(),
                ));
            }
            check_inputs(p, x)?;
            let xs = stack(x, c, h * w);
            let (emb, ecache) = embed_batch(p, xs, n, Mode::Train, rng.as_mut(), false);
            let (logits, hcache) = head_forward(p, emb, n, rng.as_mut());
            let probs: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
            let loss = probs
                .iter()
                .zip(y)
                .map(|(&q, &t)| bce_loss(q, t))
                .sum::<T>()
                / nn;
            let dlogits: Vec<T> = probs.iter().zip(y).map(|(&q, &t)| (q - t) / nn).collect();
            let de = head_backward(p, hcache, dlogits, n, &mut grads);
            let bn_stats = bn_stats(&ecache);
            embed_backward(p, ecache, de, &mut grads);
            Ok(LossOutput {
                loss,
                grads,
                probs,
                bn_stats,
            })
        }
    }
}

/// Train-mode batch-norm statistics of `batch` with dropout off; no head
/// pass and no gradients.
pub fn batch_norm_statistics<T: Real>(
    p: &Params<T>,
    batch: &Batch<'_, T>,
) -> Result<Vec<BnBatchStats<T>>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (c, h, w) = p.spec.input;
    let inputs: Vec<&[T]> = match batch {
        Batch::Pairs { a, b, .. } => a.iter().chain(b.iter()).copied().collect(),
        Batch::Windows { x, .. } => x.clone(),
    };
    check_inputs(p, &inputs)?;
    let x = stack(&inputs, c, h * w);
    let (_, cache) = embed_batch(p, x, inputs.len(), Mode::Train, None, false);
    Ok(bn_stats(&cache))
}

/// Folds batch statistics into the running estimates (unbiased variance).
pub fn update_running_stats<T: Real>(p: &mut Params<T>, stats: &[BnBatchStats<T>]) {
    let m = T::lit(BN_MOMENTUM);
    for (bn, s) in p.bns.iter_mut().zip(stats) {
        let unbias = if s.count > 1 {
            T::from_usize(s.count).expect("count") / T::from_usize(s.count - 1).expect("count")
        } else {
            T::one()
        };
        for ch in 0..bn.gamma.len() {
            bn.running_mean[ch] = (T::one() - m) * bn.running_mean[ch] + m * s.mean[ch];
            bn.running_var[ch] = (T::one() - m) * bn.running_var[ch] + m * s.var[ch] * unbias;
        }
    }
}
