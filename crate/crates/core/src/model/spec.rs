use super::ModelError;
use sha2::{Digest, Sha256};

pub const CONV_LAYERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// `filters` 3×3 kernels, stride 1, same padding.
    pub fn same3(filters: usize) -> Self {
        Self {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadKind {
    /// `g(|f(a) − f(b)|)`: ReLU dense layers of the given widths, then one
    /// logit unit.
    Siamese { hidden: Vec<usize> },
    /// One logit unit on the embedding.
    Classifier,
}

impl HeadKind {
    pub fn siamese() -> Self {
        HeadKind::Siamese {
            hidden: vec![250, 100],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Siamese { .. } => "siamese",
            HeadKind::Classifier => "classifier",
        }
    }
}

/// Shape of the CNN embedding network and its head.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    /// `(channels, height, width)`; height is time, width is wavelet scale.
    pub input: (usize, usize, usize),
    pub conv_layers: Vec<ConvSpec>,
    /// 1-based conv layer indices followed by 2×2 max pooling.
    pub pool_after: Vec<usize>,
    pub embed_dim: usize,
    pub head: HeadKind,
    pub dropout_rate: f64,
}

impl ArchitectureSpec {
    /// Six 3×3 conv layers (16, 16, 32, 32, 64, 64 filters), pooling after
    /// every second layer, a 128-unit embedding and dropout 0.3.
    pub fn standard(channels: usize, head: HeadKind) -> Self {
        Self {
            input: (channels, 128, 10),
            conv_layers: [16, 16, 32, 32, 64, 64]
                .into_iter()
                .map(ConvSpec::same3)
                .collect(),
            pool_after: vec![2, 4, 6],
            embed_dim: 128,
            head,
            dropout_rate: 0.3,
        }
    }

    /// Same layout with every filter count scaled by `width / 16`.
    pub fn with_base_width(mut self, width: usize) -> Self {
        for (i, c) in self.conv_layers.iter_mut().enumerate() {
            c.filters = width << (i / 2);
        }
        self
    }

    /// `(channels, height, width)` after each conv block (pooling included).
    pub fn block_shapes(&self) -> Result<Vec<(usize, usize, usize)>, ModelError> {
        let (_, mut h, mut w) = self.input;
        let mut shapes = Vec::with_capacity(self.conv_layers.len());
        for (i, c) in self.conv_layers.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.filters == 0 {
                return Err(ModelError::BadSpec(format!(
                    "conv {}: zero-sized parameter",
                    i + 1
                )));
            }
            if h + 2 * c.padding < c.kernel || w + 2 * c.padding < c.kernel {
                return Err(ModelError::BadSpec(format!(
                    "conv {}: kernel larger than input",
                    i + 1
                )));
            }
            h = (h + 2 * c.padding - c.kernel) / c.stride + 1;
            w = (w + 2 * c.padding - c.kernel) / c.stride + 1;
            if self.pool_after.contains(&(i + 1)) {
                h /= 2;
                w /= 2;
            }
            if h == 0 || w == 0 {
                return Err(ModelError::BadSpec(format!(
                    "spatial size reaches zero after conv {}",
                    i + 1
                )));
            }
            shapes.push((c.filters, h, w));
        }
        Ok(shapes)
    }

    pub fn flat_dim(&self) -> Result<usize, ModelError> {
        let shapes = self.block_shapes()?;
        let (c, h, w) = *shapes
            .last()
            .ok_or_else(|| ModelError::BadSpec("no conv layers".into()))?;
        Ok(c * h * w)
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Full contract: [`ArchitectureSpec::check_structure`] plus exactly six
    /// conv layers.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_layers.len() != CONV_LAYERS {
            return Err(ModelError::BadSpec(format!(
                "{} conv layers, expected {CONV_LAYERS}",
                self.conv_layers.len()
            )));
        }
        self.check_structure()
    }

    /// Shape consistency only; accepts any layer count, so reduced networks
    /// can be built for hand-checkable tests.
    pub fn check_structure(&self) -> Result<(), ModelError> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::BadSpec("empty input shape".into()));
        }
        if self.conv_layers.is_empty() {
            return Err(ModelError::BadSpec("no conv layers".into()));
        }
        if self
            .pool_after
            .iter()
            .any(|&p| p == 0 || p > self.conv_layers.len())
        {
            return Err(ModelError::BadSpec("pool index outside conv layers".into()));
        }
        if self.embed_dim == 0 {
            return Err(ModelError::BadSpec("embed_dim must be positive".into()));
        }
        if let HeadKind::Siamese { hidden } = &self.head {
            if hidden.contains(&0) {
                return Err(ModelError::BadSpec("zero-width head layer".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::BadSpec(format!(
                "dropout {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.block_shapes()?;
        Ok(())
    }

    /// Canonical one-line rendering; [`ArchitectureSpec::parse`] inverts it.
    pub fn canonical(&self) -> String {
        let convs: Vec<String> = self
            .conv_layers
            .iter()
            .map(|c| format!("{}:{}:{}:{}", c.filters, c.kernel, c.stride, c.padding))
            .collect();
        let pools: Vec<String> = self.pool_after.iter().map(|p| p.to_string()).collect();
        let head = match &self.head {
            HeadKind::Siamese { hidden } => {
                let h: Vec<String> = hidden.iter().map(|v| v.to_string()).collect();
                format!("siamese:{}", h.join(","))
            }
            HeadKind::Classifier => "classifier".to_string(),
        };
        format!(
            "input={}x{}x{};conv={};pool={};embed={};head={};dropout={}",
            self.input.0,
            self.input.1,
            self.input.2,
            convs.join(","),
            pools.join(","),
            self.embed_dim,
            head,
            self.dropout_rate
        )
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::BadSpec(format!("{m} in {s:?}"));
        let mut spec = Self::standard(1, HeadKind::Classifier);
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            let nums = |v: &str, sep: char| -> Result<Vec<usize>, ModelError> {
                if v.is_empty() {
                    return Ok(vec![]);
                }
                v.split(sep)
                    .map(|t| t.parse().map_err(|_| bad("bad integer")))
                    .collect()
            };
            match k {
                "input" => {
                    let d = nums(v, 'x')?;
                    let [c, h, w] = d[..] else {
                        return Err(bad("input needs 3 dims"));
                    };
                    spec.input = (c, h, w);
                }
                "conv" => {
                    spec.conv_layers = v
                        .split(',')
                        .map(|c| {
                            let d = nums(c, ':')?;
                            let [filters, kernel, stride, padding] = d[..] else {
                                return Err(bad("conv needs 4 fields"));
                            };
                            Ok(ConvSpec {
                                filters,
                                kernel,
                                stride,
                                padding,
                            })
                        })
                        .collect::<Result<_, _>>()?;
                }
                "pool" => spec.pool_after = nums(v, ',')?,
                "embed" => spec.embed_dim = v.parse().map_err(|_| bad("embed"))?,
                "head" => {
                    spec.head = match v.split_once(':') {
                        Some(("siamese", h)) => HeadKind::Siamese {
                            hidden: nums(h, ',')?,
                        },
                        None if v == "siamese" => HeadKind::Siamese { hidden: vec![] },
                        None if v == "classifier" => HeadKind::Classifier,
                        _ => return Err(bad("unknown head")),
                    }
                }
                "dropout" => spec.dropout_rate = v.parse().map_err(|_| bad("dropout"))?,
                _ => return Err(bad("unknown key")),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// First eight bytes of the SHA-256 of [`ArchitectureSpec::canonical`].
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shapes() {
        let s = ArchitectureSpec::standard(22, HeadKind::siamese());
        s.validate().unwrap();
        let shapes = s.block_shapes().unwrap();
        assert_eq!(shapes[1], (16, 64, 5));
        assert_eq!(shapes[3], (32, 32, 2));
        assert_eq!(shapes[5], (64, 16, 1));
        assert_eq!(s.flat_dim().unwrap(), 1024);
    }

    #[test]
    fn canonical_round_trip_and_fingerprint() {
        let s = ArchitectureSpec::standard(4, HeadKind::siamese());
        let back = ArchitectureSpec::parse(&s.canonical()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.fingerprint(), s.fingerprint());
        let c = ArchitectureSpec::standard(4, HeadKind::Classifier);
        assert_ne!(c.fingerprint(), s.fingerprint());
    }

    #[test]
    fn pooling_to_zero_is_rejected() {
        let mut s = ArchitectureSpec::standard(1, HeadKind::Classifier);
        s.input = (1, 128, 4);
        assert!(matches!(s.validate(), Err(ModelError::BadSpec(_))));
        let mut s = ArchitectureSpec::standard(1, HeadKind::Classifier);
        s.dropout_rate = 1.0;
        assert!(s.validate().is_err());
        let mut s = ArchitectureSpec::standard(1, HeadKind::Classifier);
        s.conv_layers.truncate(2);
        s.pool_after = vec![2];
        assert!(s.validate().is_err());
        assert!(s.check_structure().is_ok());
    }

    #[test]
    fn base_width_scaling() {
        let s = ArchitectureSpec::standard(2, HeadKind::Classifier).with_base_width(8);
        let f: Vec<usize> = s.conv_layers.iter().map(|c| c.filters).collect();
        assert_eq!(f, vec![8, 8, 16, 16, 32, 32]);
    }
}
