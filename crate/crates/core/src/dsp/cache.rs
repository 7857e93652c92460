//! `ICT1` tensor cache: little-endian, `(channels, windows, scales)` header
//! followed by f32 values in `(window, channel, time, scale)` order.

use super::{DspError, WindowTensor, WINDOW_LEN};

pub const CACHE_MAGIC: &[u8; 4] = b"ICT1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCache {
    pub channels: usize,
    pub scales: usize,
    /// One flat `channels × 128 × scales` buffer per window.
    pub windows: Vec<Vec<f32>>,
}

pub fn write_tensor_cache(windows: &[WindowTensor]) -> Result<Vec<u8>, DspError> {
    let (channels, scales) = windows.first().map_or((0, 0), |w| (w.channels, w.scales));
    let per = channels * WINDOW_LEN * scales;
    let mut w = TensorCacheWriter::new(
        Vec::with_capacity(16 + 4 * per * windows.len()),
        channels,
        scales,
        windows.len(),
    )
    .map_err(|e| DspError::BadCache(e.to_string()))?;
    for t in windows {
        w.push(t)?;
    }
    w.finish()
}

/// Streams windows into an `ICT1` cache whose window count is known up
/// front, so large recordings never sit in memory as a whole.
pub struct TensorCacheWriter<W: std::io::Write> {
    out: W,
    channels: usize,
    scales: usize,
    expected: usize,
    written: usize,
}

impl<W: std::io::Write> TensorCacheWriter<W> {
    pub fn new(
        mut out: W,
        channels: usize,
        scales: usize,
        windows: usize,
    ) -> std::io::Result<Self> {
        out.write_all(CACHE_MAGIC)?;
        for v in [channels, windows, scales] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        Ok(Self {
            out,
            channels,
            scales,
            expected: windows,
            written: 0,
        })
    }

    pub fn push(&mut self, t: &WindowTensor) -> Result<(), DspError> {
        if (t.channels, t.scales) != (self.channels, self.scales) {
            return Err(DspError::ShapeMismatch("tensors differ in shape".into()));
        }
        if self.written == self.expected {
            return Err(DspError::BadCache(format!(
                "more than the declared {} windows",
                self.expected
            )));
        }
        let bytes: Vec<u8> = t.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.out
            .write_all(&bytes)
            .map_err(|e| DspError::BadCache(e.to_string()))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, DspError> {
        if self.written != self.expected {
            return Err(DspError::BadCache(format!(
                "declared {} windows, wrote {}",
                self.expected, self.written
            )));
        }
        self.out
            .flush()
            .map_err(|e| DspError::BadCache(e.to_string()))?;
        Ok(self.out)
    }
}

pub fn read_tensor_cache(bytes: &[u8]) -> Result<TensorCache, DspError> {
    if bytes.len() < 16 {
        return Err(DspError::BadCache("shorter than header".into()));
    }
    if &bytes[..4] != CACHE_MAGIC {
        return Err(DspError::BadCache("bad magic".into()));
    }
    let word = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    let (channels, n, scales) = (word(0), word(1), word(2));
    let per = channels * WINDOW_LEN * scales;
    let expected = 16 + 4 * per * n;
    if bytes.len() != expected {
        return Err(DspError::BadCache(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let windows = bytes[16..]
        .chunks_exact(4 * per.max(1))
        .take(n)
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect();
    Ok(TensorCache {
        channels,
        scales,
        windows,
    })
}
