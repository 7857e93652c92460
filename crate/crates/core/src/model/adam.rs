use super::{Grads, ModelError, Real};

/// Adam moments for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `tensors`, with the usual defaults
    /// (0.9, 0.999, 1e-8).
    pub fn new(shapes: impl IntoIterator<Item = usize>, lr: f64) -> Self {
        let m: Vec<Vec<T>> = shapes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update of `tensors` in place.
    pub fn apply(&mut self, tensors: Vec<&mut Vec<T>>, grads: &Grads<T>) -> Result<(), ModelError> {
        if tensors.len() != self.m.len()
            || grads.len() != self.m.len()
            || tensors
                .iter()
                .zip(grads)
                .zip(&self.m)
                .any(|((t, g), m)| t.len() != m.len() || g.len() != m.len())
        {
            return Err(ModelError::ShapeMismatch(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((t, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..t.len() {
                let gi = g[i].to_f64().unwrap_or(f64::NAN);
                let mi = b1 * m[i].to_f64().unwrap_or(0.0) + (1.0 - b1) * gi;
                let vi = b2 * v[i].to_f64().unwrap_or(0.0) + (1.0 - b2) * gi * gi;
                m[i] = T::lit(mi);
                v[i] = T::lit(vi);
                let delta = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                t[i] = T::lit(t[i].to_f64().unwrap_or(f64::NAN) - delta);
            }
        }
        Ok(())
    }
}
