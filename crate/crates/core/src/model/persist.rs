//! `ICTW` weight files: magic, format version, architecture fingerprint,
//! canonical architecture string, then every tensor as little-endian f32.

use super::{ArchitectureSpec, ModelError, ModelParams, Params};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ICTW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_params(p: &ModelParams) -> Vec<u8> {
    let spec = p.spec.canonical();
    let tensors = p.all_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&p.fingerprint().to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            ModelError::TruncatedFile(format!("missing {what} at byte {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn load_params(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(ModelError::VersionUnsupported(version));
    }
    let found = u64::from_le_bytes(r.take(8, "fingerprint")?.try_into().expect("8 bytes"));
    let len = r.u32("architecture length")? as usize;
    let text = std::str::from_utf8(r.take(len, "architecture")?)
        .map_err(|_| ModelError::BadSpec("architecture is not UTF-8".into()))?;
    let spec = ArchitectureSpec::parse(text)?;
    if spec.fingerprint() != found {
        return Err(ModelError::FingerprintMismatch {
            expected: spec.fingerprint(),
            found,
        });
    }
    let mut p: ModelParams = Params::init(&spec, 0)?;
    let count = r.u32("tensor count")? as usize;
    let mut slots = p.all_tensors_mut();
    if count != slots.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{count} tensors, expected {}",
            slots.len()
        )));
    }
    for (i, slot) in slots.iter_mut().enumerate() {
        let n = r.u32("tensor length")? as usize;
        if n != slot.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "tensor {i}: {n} values, expected {}",
                slot.len()
            )));
        }
        let raw = r.take(4 * n, "tensor data")?;
        for (v, b) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if r.at != bytes.len() {
        return Err(ModelError::ShapeMismatch(
            "trailing bytes after last tensor".into(),
        ));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    fn small() -> ModelParams {
        let spec = ArchitectureSpec::standard(2, HeadKind::siamese()).with_base_width(4);
        let mut p = Params::init(&spec, 3).unwrap();
        p.bns[0].running_var[1] = 2.5;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = small();
        let bytes = save_params(&p);
        assert_eq!(&bytes[..4], b"ICTW");
        assert_eq!(load_params(&bytes).unwrap(), p);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = save_params(&small());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert_eq!(load_params(&bad), Err(ModelError::BadMagic));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(load_params(&bad), Err(ModelError::VersionUnsupported(9)));

        let mut bad = bytes.clone();
        bad[8] ^= 1;
        assert!(matches!(
            load_params(&bad),
            Err(ModelError::FingerprintMismatch { .. })
        ));

        assert!(matches!(
            load_params(&bytes[..bytes.len() - 3]),
            Err(ModelError::TruncatedFile(_))
        ));
        assert!(matches!(
            load_params(&bytes[..6]),
            Err(ModelError::TruncatedFile(_))
        ));
    }
}
