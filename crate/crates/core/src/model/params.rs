use super::{ArchitectureSpec, HeadKind, ModelError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Debug;

/// Floating-point type the network runs in: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c ← alpha · a·b + beta · c` with arbitrary row/column strides.
    ///
    /// # Safety
    /// The strided views must lie inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Shape as seen by the product.
    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c (m×n, row-major) ← a·b + (accumulate ? c : 0)`.
pub(crate) fn matmul<T: Real>(a: Mat<T>, b: Mat<T>, c: &mut [T], accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    // SAFETY: shapes and slice lengths were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[out][in]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// `[out_channel][in_channel][kh][kw]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// All weights of the embedding network and its head.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub spec: ArchitectureSpec,
    pub convs: Vec<Conv<T>>,
    pub bns: Vec<BatchNorm<T>>,
    pub embed: Dense<T>,
    /// Siamese: hidden layers then the logit unit. Classifier: the logit unit.
    pub head: Vec<Dense<T>>,
}

/// Trainable weights in 32-bit floats.
pub type ModelParams = Params<f32>;

/// Gradients, one buffer per learnable tensor in [`Params::learnable`] order.
pub type Grads<T> = Vec<Vec<T>>;

impl<T: Real> Params<T> {
    /// He-normal weights (fan-in), zero biases, unit BN scale, zero BN shift,
    /// running statistics (0, 1).
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Result<Self, ModelError> {
        spec.check_structure()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |n: usize, fan_in: usize| -> Vec<T> {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| T::lit(d.sample(&mut rng))).collect()
        };
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut in_ch = spec.input.0;
        for c in &spec.conv_layers {
            let fan_in = in_ch * c.kernel * c.kernel;
            convs.push(Conv {
                w: he(c.filters * fan_in, fan_in),
                b: vec![T::zero(); c.filters],
            });
            bns.push(BatchNorm {
                gamma: vec![T::one(); c.filters],
                beta: vec![T::zero(); c.filters],
                running_mean: vec![T::zero(); c.filters],
                running_var: vec![T::one(); c.filters],
            });
            in_ch = c.filters;
        }
        let mut dense = |n_in: usize, n_out: usize| Dense {
            w: he(n_in * n_out, n_in),
            b: vec![T::zero(); n_out],
            n_in,
            n_out,
        };
        let embed = dense(spec.flat_dim()?, spec.embed_dim);
        let mut head = Vec::new();
        let mut width = spec.embed_dim;
        if let HeadKind::Siamese { hidden } = &spec.head {
            for &h in hidden {
                head.push(dense(width, h));
                width = h;
            }
        }
        head.push(dense(width, 1));
        Ok(Self {
            spec: spec.clone(),
            convs,
            bns,
            embed,
            head,
        })
    }

    /// Learnable tensors in a fixed order: per conv block (weight, bias,
    /// gamma, beta), then embedding (weight, bias), then head layers.
    pub fn learnable(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::new();
        for (c, bn) in self.convs.iter().zip(&self.bns) {
            v.extend([&c.w[..], &c.b[..], &bn.gamma[..], &bn.beta[..]]);
        }
        v.extend([&self.embed.w[..], &self.embed.b[..]]);
        for d in &self.head {
            v.extend([&d.w[..], &d.b[..]]);
        }
        v
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v: Vec<&mut Vec<T>> = Vec::new();
        for (c, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            v.extend([&mut c.w, &mut c.b, &mut bn.gamma, &mut bn.beta]);
        }
        v.extend([&mut self.embed.w, &mut self.embed.b]);
        for d in self.head.iter_mut() {
            v.extend([&mut d.w, &mut d.b]);
        }
        v
    }

    /// Human-readable names matching [`Params::learnable`].
    pub fn learnable_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.convs.len() {
            for p in ["weight", "bias", "gamma", "beta"] {
                v.push(format!("conv{}.{p}", i + 1));
            }
        }
        v.extend(["embed.weight".to_string(), "embed.bias".to_string()]);
        for i in 0..self.head.len() {
            v.extend([
                format!("head{}.weight", i + 1),
                format!("head{}.bias", i + 1),
            ]);
        }
        v
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.learnable()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect()
    }

    /// Every tensor, learnable or not, in save order.
    pub fn all_tensors(&self) -> Vec<&[T]> {
        let mut v = self.learnable();
        for bn in &self.bns {
            v.extend([&bn.running_mean[..], &bn.running_var[..]]);
        }
        v
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v: Vec<&mut Vec<T>> = Vec::new();
        let mut running: Vec<&mut Vec<T>> = Vec::new();
        for (c, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            let BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } = bn;
            v.extend([&mut c.w, &mut c.b, gamma, beta]);
            running.extend([running_mean, running_var]);
        }
        v.extend([&mut self.embed.w, &mut self.embed.b]);
        for d in self.head.iter_mut() {
            v.extend([&mut d.w, &mut d.b]);
        }
        v.extend(running);
        v
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> Params<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|&x| f(x)).collect() };
        let dense = |d: &Dense<T>| Dense {
            w: conv(&d.w),
            b: conv(&d.b),
            n_in: d.n_in,
            n_out: d.n_out,
        };
        Params {
            spec: self.spec.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv {
                    w: conv(&c.w),
                    b: conv(&c.b),
                })
                .collect(),
            bns: self
                .bns
                .iter()
                .map(|b| BatchNorm {
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                })
                .collect(),
            embed: dense(&self.embed),
            head: self.head.iter().map(dense).collect(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.spec.fingerprint()
    }

    pub fn is_finite(&self) -> bool {
        self.all_tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = ArchitectureSpec::standard(2, HeadKind::siamese());
        let a = ModelParams::init(&spec, 7).unwrap();
        let b = ModelParams::init(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::init(&spec, 8).unwrap());
        assert!(a.convs.iter().all(|c| c.b.iter().all(|&v| v == 0.0)));
        assert!(a.head.iter().all(|d| d.b.iter().all(|&v| v == 0.0)));
        assert!(a
            .bns
            .iter()
            .all(|b| b.running_var.iter().all(|&v| v == 1.0)));
        assert!(a
            .bns
            .iter()
            .all(|b| b.running_mean.iter().all(|&v| v == 0.0)));
        assert_eq!(a.head.len(), 3);
        assert_eq!((a.head[0].n_in, a.head[0].n_out), (128, 250));
        assert_eq!((a.head[1].n_in, a.head[1].n_out), (250, 100));
        assert_eq!(a.learnable().len(), a.learnable_names().len());
    }

    #[test]
    fn matmul_handles_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0f64, 2., 3., 4., 5., 6.];
        let b = [1.0f64, 0., 0., 1., 1., 1.];
        let mut c = [0.0; 4];
        matmul(Mat::new(&a, 2, 3), Mat::new(&b, 3, 2), &mut c, false);
        assert_eq!(c, [4., 5., 10., 11.]);
        // aᵀ·a is 3×3
        let mut d = [0.0; 9];
        matmul(Mat::new(&a, 2, 3).t(), Mat::new(&a, 2, 3), &mut d, false);
        assert_eq!(d, [17., 22., 27., 22., 29., 36., 27., 36., 45.]);
        matmul(Mat::new(&a, 2, 3), Mat::new(&b, 3, 2), &mut c, true);
        assert_eq!(c, [8., 10., 20., 22.]);
    }
}
