//! Self-describing binary predictor format, little-endian:
//!
//! ```text
//! "FPAE" | version u16 | arch tag u8 | n_features u32 | n_classes u32
//! | origin: client u32, slot u32, training seed u64
//! | shape: count u16, count x u32   (mlp hidden widths, or [n_stumps])
//! | param byte length u64 | params as f32
//! ```

use super::{Architecture, Origin, Predictor};
use crate::error::{FedPaeError, Result};
use crate::scalar::Scalar;

pub const PREDICTOR_MAGIC: &[u8; 4] = b"FPAE";
pub const PREDICTOR_FORMAT_VERSION: u16 = 1;

pub fn encode_predictor<T: Scalar>(p: &Predictor<T>) -> Vec<u8> {
    let shape: Vec<u32> = match p.architecture() {
        Architecture::Mlp { hidden } => hidden.iter().map(|&h| h as u32).collect(),
        Architecture::StumpForest { n_stumps } => vec![*n_stumps as u32],
        _ => Vec::new(),
    };
    let mut out = Vec::with_capacity(40 + 4 * shape.len() + 4 * p.params().len());
    out.extend_from_slice(PREDICTOR_MAGIC);
    out.extend_from_slice(&PREDICTOR_FORMAT_VERSION.to_le_bytes());
    out.push(p.architecture().tag());
    out.extend_from_slice(&(p.n_features() as u32).to_le_bytes());
    out.extend_from_slice(&(p.n_classes() as u32).to_le_bytes());
    let origin = p.origin();
    out.extend_from_slice(&origin.client_id.to_le_bytes());
    out.extend_from_slice(&origin.slot.to_le_bytes());
    out.extend_from_slice(&origin.training_seed.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u16).to_le_bytes());
    for s in shape {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&((p.params().len() * 4) as u64).to_le_bytes());
    for v in p.params() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FedPaeError::Protocol(format!("predictor truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_predictor<T: Scalar>(bytes: &[u8]) -> Result<Predictor<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != PREDICTOR_MAGIC {
        return Err(FedPaeError::Protocol("predictor magic mismatch".into()));
    }
    let version = r.u16()?;
    if version != PREDICTOR_FORMAT_VERSION {
        return Err(FedPaeError::Protocol(format!(
            "unsupported predictor format version {version}"
        )));
    }
    let tag = r.u8()?;
    let n_features = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let origin = Origin {
        client_id: r.u32()?,
        slot: r.u32()?,
        training_seed: r.u64()?,
    };
    let shape_len = r.u16()? as usize;
    let shape = (0..shape_len)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let architecture = match (tag, shape.as_slice()) {
        (0, []) => Architecture::LogisticRegression,
        (1, hidden) if !hidden.is_empty() => Architecture::Mlp {
            hidden: hidden.to_vec(),
        },
        (2, []) => Architecture::NearestCentroid,
        (3, [n]) => Architecture::StumpForest { n_stumps: *n },
        (4, []) => Architecture::Constant,
        _ => {
            return Err(FedPaeError::Protocol(format!(
                "unknown architecture tag {tag} with shape {shape:?}"
            )))
        }
    };
    let byte_len = r.u64()?;
    let byte_len = usize::try_from(byte_len)
        .ok()
        .filter(|b| b % 4 == 0)
        .ok_or_else(|| FedPaeError::Protocol(format!("bad parameter byte length {byte_len}")))?;
    let raw = r.take(byte_len)?;
    if r.pos != bytes.len() {
        return Err(FedPaeError::Protocol(format!(
            "{} trailing bytes after predictor",
            bytes.len() - r.pos
        )));
    }
    let params = raw
        .chunks_exact(4)
        .map(|b| T::lit(f64::from(f32::from_le_bytes(b.try_into().unwrap()))))
        .collect();
    Predictor::from_parts(architecture, n_features, n_classes, params, origin)
        .map_err(|e| FedPaeError::Protocol(format!("inconsistent predictor: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Predictor<f32> {
        Predictor::from_parts(
            Architecture::Mlp { hidden: vec![2] },
            2,
            2,
            (0..12).map(|i| i as f32 * 0.25 - 1.0).collect(),
            Origin {
                client_id: 3,
                slot: 1,
                training_seed: 99,
            },
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_predictor(&sample());
        assert_eq!(&bytes[..4], b"FPAE");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
        // 4+2+1+4+4 + 16 origin + 2+4 shape + 8 length + 48 params
        assert_eq!(bytes.len(), 15 + 16 + 6 + 8 + 48);
        assert_eq!(decode_predictor::<f32>(&bytes).unwrap(), sample());
    }

    #[test]
    fn malformed_inputs_are_protocol_errors() {
        let bytes = encode_predictor(&sample());
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(
                decode_predictor::<f32>(&bytes[..cut]),
                Err(FedPaeError::Protocol(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_predictor::<f32>(&bad).is_err());
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(decode_predictor::<f32>(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_predictor::<f32>(&long).is_err());
    }
}
