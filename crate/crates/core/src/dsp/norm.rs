use super::{DspError, WindowTensor, WINDOW_LEN};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-(channel, scale) mean and standard deviation of training coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub channels: usize,
    pub scales: usize,
    /// Row-major `[channel][scale]`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics that leave tensors unchanged.
    pub fn identity(channels: usize, scales: usize) -> Self {
        Self {
            channels,
            scales,
            mean: vec![0.0; channels * scales],
            std: vec![1.0; channels * scales],
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("# ictal-norm v1\n{} {}\n", self.channels, self.scales);
        for c in 0..self.channels {
            for j in 0..self.scales {
                let k = c * self.scales + j;
                s.push_str(&format!("{c} {j} {:e} {:e}\n", self.mean[k], self.std[k]));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, DspError> {
        let bad = |m: &str| DspError::BadCache(format!("norm stats: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("# ictal-norm v1") {
            return Err(bad("missing version line"));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing dimensions"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("dimensions")))
            .collect::<Result<_, _>>()?;
        let [channels, scales] = dims[..] else {
            return Err(bad("dimensions"));
        };
        let mut stats = Self::identity(channels, scales);
        let mut seen = 0;
        for l in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 4 {
                return Err(bad("row width"));
            }
            let c: usize = t[0].parse().map_err(|_| bad("channel"))?;
            let j: usize = t[1].parse().map_err(|_| bad("scale"))?;
            if c >= channels || j >= scales {
                return Err(bad("index out of range"));
            }
            stats.mean[c * scales + j] = t[2].parse().map_err(|_| bad("mean"))?;
            stats.std[c * scales + j] = t[3].parse().map_err(|_| bad("std"))?;
            seen += 1;
        }
        if seen != channels * scales {
            return Err(bad("row count"));
        }
        Ok(stats)
    }
}

/// Mean and population standard deviation over all windows and time steps,
/// accumulated in window order.
pub fn fit_norm_stats<'a, I>(tensors: I) -> Result<NormStats, DspError>
where
    I: IntoIterator<Item = &'a WindowTensor>,
    I::IntoIter: Clone,
{
    let iter = tensors.into_iter();
    let first = iter.clone().next().ok_or(DspError::EmptyInput)?;
    let (channels, scales) = (first.channels, first.scales);
    let cells = channels * scales;
    let mut sum = vec![0.0f64; cells];
    let mut count = 0usize;
    for w in iter.clone() {
        if (w.channels, w.scales) != (channels, scales) {
            return Err(DspError::ShapeMismatch("tensors differ in shape".into()));
        }
        for c in 0..channels {
            for t in 0..WINDOW_LEN {
                let base = (c * WINDOW_LEN + t) * scales;
                for j in 0..scales {
                    sum[c * scales + j] += w.values[base + j] as f64;
                }
            }
        }
        count += WINDOW_LEN;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; cells];
    for w in iter {
        for c in 0..channels {
            for t in 0..WINDOW_LEN {
                let base = (c * WINDOW_LEN + t) * scales;
                for j in 0..scales {
                    let d = w.values[base + j] as f64 - mean[c * scales + j];
                    sq[c * scales + j] += d * d;
                }
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats {
        channels,
        scales,
        mean,
        std,
    })
}

/// `(value − mean) / std` per cell.
pub fn apply_norm(tensor: &WindowTensor, stats: &NormStats) -> WindowTensor {
    let mut out = tensor.clone();
    let scales = stats.scales;
    for c in 0..tensor.channels.min(stats.channels) {
        for t in 0..WINDOW_LEN {
            let base = (c * WINDOW_LEN + t) * tensor.scales;
            for j in 0..scales.min(tensor.scales) {
                let k = c * scales + j;
                let v = &mut out.values[base + j];
                *v = ((*v as f64 - stats.mean[k]) / stats.std[k]) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn tensor(values: Vec<f32>, channels: usize) -> WindowTensor {
        WindowTensor::new(values, channels, 10).unwrap()
    }

    #[test]
    fn zero_tensor_hits_floor() {
        let s = fit_norm_stats(&[tensor(vec![0.0; 1280], 1)]).unwrap();
        assert!(s.mean.iter().all(|&m| m == 0.0));
        assert!(s.std.iter().all(|&v| v == STD_FLOOR));
    }

    #[test]
    fn empty_input_errors() {
        let none: Vec<WindowTensor> = vec![];
        assert_eq!(fit_norm_stats(&none), Err(DspError::EmptyInput));
    }

    #[test]
    fn recovers_generator_moments() {
        // 782 windows × 128 time steps ≈ 1e5 cells per (channel, scale)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Normal::new(5.0f32, 2.0).unwrap();
        let ws: Vec<WindowTensor> = (0..782)
            .map(|_| tensor((0..2 * 1280).map(|_| dist.sample(&mut rng)).collect(), 2))
            .collect();
        let s = fit_norm_stats(&ws).unwrap();
        for k in 0..20 {
            assert!((s.mean[k] - 5.0).abs() < 0.05, "{}", s.mean[k]);
            assert!((s.std[k] - 2.0).abs() < 0.05, "{}", s.std[k]);
        }
        let normed: Vec<WindowTensor> = ws.iter().map(|w| apply_norm(w, &s)).collect();
        let again = fit_norm_stats(&normed).unwrap();
        assert!(again.mean.iter().all(|m| m.abs() < 1e-6));
    }

    #[test]
    fn identity_constant_and_non_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = Normal::new(0.0f32, 3.0).unwrap();
        let w = tensor((0..1280).map(|_| dist.sample(&mut rng)).collect(), 1);
        assert_eq!(apply_norm(&w, &NormStats::identity(1, 10)), w);

        let mut stats = NormStats::identity(1, 10);
        stats.mean = vec![2.5; 10];
        stats.std = vec![4.0; 10];
        let constant = tensor(vec![2.5; 1280], 1);
        assert!(apply_norm(&constant, &stats)
            .values
            .iter()
            .all(|&v| v == 0.0));

        let once = apply_norm(&w, &stats);
        let twice = apply_norm(&once, &stats);
        assert_ne!(once, twice);
    }

    #[test]
    fn text_round_trip() {
        let mut s = NormStats::identity(2, 3);
        s.mean[4] = -1.25e-3;
        s.std[1] = 17.5;
        assert_eq!(NormStats::parse(&s.render()).unwrap(), s);
        assert!(NormStats::parse("garbage").is_err());
    }
}
