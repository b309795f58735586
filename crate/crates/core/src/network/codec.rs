//! Framed peer-to-peer messages, little-endian:
//!
//! ```text
//! "FPN1" | type u8 | sender u32 | receiver u32 | payload length u32 | payload | crc32 u32
//! ```
//!
//! The checksum covers every byte before it.

use crate::error::{FedPaeError, Result};
use crate::learners::Architecture;
use crate::scalar::Scalar;
use crate::selection::{ModelDescriptor, ModelId};

pub const FRAME_MAGIC: &[u8; 4] = b"FPN1";
/// Magic, type, sender, receiver and payload length.
pub const HEADER_LEN: usize = 17;
pub const CRC_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    /// Payload: a serialized predictor.
    Model,
    /// Payload: see [`encode_predictions`].
    Predictions,
    /// Empty payload; the peer answers with its local models.
    BenchRequest,
    /// Payload: a 16-byte model id; the owner answers with that model.
    ModelRequest,
}

impl MessageType {
    pub fn code(self) -> u8 {
        match self {
            MessageType::Model => 1,
            MessageType::Predictions => 2,
            MessageType::BenchRequest => 3,
            MessageType::ModelRequest => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            1 => MessageType::Model,
            2 => MessageType::Predictions,
            3 => MessageType::BenchRequest,
            4 => MessageType::ModelRequest,
            other => return Err(FedPaeError::Protocol(format!("unknown message type {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Model => "MODEL",
            MessageType::Predictions => "PREDICTIONS",
            MessageType::BenchRequest => "BENCH_REQUEST",
            MessageType::ModelRequest => "MODEL_REQUEST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageType,
    pub sender: u32,
    pub receiver: u32,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(kind: MessageType, sender: u32, receiver: u32, payload: Vec<u8>) -> Self {
        Message {
            kind,
            sender,
            receiver,
            payload,
        }
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + CRC_LEN
    }
}

pub fn encode_message(m: &Message) -> Result<Vec<u8>> {
    let len = u32::try_from(m.payload.len())
        .map_err(|_| FedPaeError::input(format!("payload of {} bytes exceeds u32", m.payload.len())))?;
    let mut out = Vec::with_capacity(m.frame_len());
    out.extend_from_slice(FRAME_MAGIC);
    out.push(m.kind.code());
    out.extend_from_slice(&m.sender.to_le_bytes());
    out.extend_from_slice(&m.receiver.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&m.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes the first frame in `bytes`, returning it with the number of bytes
/// consumed. A truncated frame yields [`FedPaeError::IncompleteFrame`].
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize)> {
    let magic_seen = bytes.len().min(4);
    if bytes[..magic_seen] != FRAME_MAGIC[..magic_seen] {
        return Err(FedPaeError::Protocol("frame magic mismatch".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FedPaeError::IncompleteFrame {
            needed: HEADER_LEN + CRC_LEN - bytes.len(),
        });
    }
    let kind = MessageType::from_code(bytes[4])?;
    let payload_len = u32_at(bytes, 13) as usize;
    let total = HEADER_LEN + payload_len + CRC_LEN;
    if bytes.len() < total {
        return Err(FedPaeError::IncompleteFrame {
            needed: total - bytes.len(),
        });
    }
    let body_end = HEADER_LEN + payload_len;
    let expected = u32_at(bytes, body_end);
    let actual = crc32fast::hash(&bytes[..body_end]);
    if expected != actual {
        return Err(FedPaeError::Corruption { expected, actual });
    }
    let message = Message {
        kind,
        sender: u32_at(bytes, 5),
        receiver: u32_at(bytes, 9),
        payload: bytes[HEADER_LEN..body_end].to_vec(),
    };
    Ok((message, total))
}

/// Decodes exactly one frame; trailing bytes are a protocol error.
pub fn decode_message(bytes: &[u8]) -> Result<Message> {
    let (m, used) = decode_frame(bytes)?;
    if used != bytes.len() {
        return Err(FedPaeError::Protocol(format!(
            "{} trailing bytes after frame",
            bytes.len() - used
        )));
    }
    Ok(m)
}

/// Reassembles frames from an arbitrarily chunked byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet part of a complete frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn next_message(&mut self) -> Result<Option<Message>> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        match decode_frame(&self.buf) {
            Ok((m, used)) => {
                self.buf.drain(..used);
                Ok(Some(m))
            }
            Err(FedPaeError::IncompleteFrame { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

pub fn encode_model_id(id: &ModelId) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(&id.origin_client.to_le_bytes());
    out.extend_from_slice(&id.slot.to_le_bytes());
    out.extend_from_slice(&id.content_hash.to_le_bytes());
    out
}

pub fn decode_model_id(bytes: &[u8]) -> Result<ModelId> {
    if bytes.len() != 16 {
        return Err(FedPaeError::Protocol(format!(
            "model id needs 16 bytes, got {}",
            bytes.len()
        )));
    }
    Ok(ModelId {
        origin_client: u32_at(bytes, 0),
        slot: u32_at(bytes, 4),
        content_hash: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
    })
}

/// A model's prediction column over some validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionsPayload<T> {
    pub id: ModelId,
    pub architecture: Architecture,
    pub n_classes: usize,
    /// Flattened `n_samples x n_classes` probabilities.
    pub column: Vec<T>,
}

impl<T: Scalar> PredictionsPayload<T> {
    pub fn descriptor(&self, bench_owner: u32) -> ModelDescriptor {
        ModelDescriptor {
            id: self.id,
            architecture: self.architecture.clone(),
            is_local: self.id.origin_client == bench_owner,
        }
    }
}

/// ```text
/// model id (16) | arch json length u16 | arch json | n_samples u32 | n_classes u32
/// | value width u8 | values
/// ```
/// Values keep the scalar's native width so columns round-trip bit-exactly.
pub fn encode_predictions<T: Scalar>(p: &PredictionsPayload<T>) -> Result<Vec<u8>> {
    if p.n_classes == 0 || !p.column.len().is_multiple_of(p.n_classes) {
        return Err(FedPaeError::input("prediction column is not a whole number of rows"));
    }
    let arch = serde_json::to_vec(&p.architecture).expect("architecture serializes");
    let mut out = encode_model_id(&p.id);
    out.extend_from_slice(&(arch.len() as u16).to_le_bytes());
    out.extend_from_slice(&arch);
    out.extend_from_slice(&((p.column.len() / p.n_classes) as u32).to_le_bytes());
    out.extend_from_slice(&(p.n_classes as u32).to_le_bytes());
    out.push(T::WIDTH);
    for &v in &p.column {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode_predictions<T: Scalar>(bytes: &[u8]) -> Result<PredictionsPayload<T>> {
    let short = || FedPaeError::Protocol("truncated predictions payload".into());
    if bytes.len() < 18 {
        return Err(short());
    }
    let id = decode_model_id(&bytes[..16])?;
    let arch_len = u16::from_le_bytes([bytes[16], bytes[17]]) as usize;
    let mut at = 18 + arch_len;
    if bytes.len() < at + 9 {
        return Err(short());
    }
    let architecture: Architecture = serde_json::from_slice(&bytes[18..at])
        .map_err(|e| FedPaeError::Protocol(format!("bad architecture in predictions payload: {e}")))?;
    let n_samples = u32_at(bytes, at) as usize;
    let n_classes = u32_at(bytes, at + 4) as usize;
    let width = bytes[at + 8];
    at += 9;
    if width != T::WIDTH {
        return Err(FedPaeError::Protocol(format!(
            "predictions stored with {width}-byte values, reader expects {}",
            T::WIDTH
        )));
    }
    let count = n_samples
        .checked_mul(n_classes)
        .ok_or_else(|| FedPaeError::Protocol("prediction shape overflows".into()))?;
    let w = width as usize;
    if bytes.len() != at + count * w {
        return Err(FedPaeError::Protocol(format!(
            "predictions payload holds {} value bytes, shape needs {}",
            bytes.len() - at,
            count * w
        )));
    }
    let column = bytes[at..].chunks_exact(w).map(T::read_le).collect();
    Ok(PredictionsPayload {
        id,
        architecture,
        n_classes,
        column,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds() -> impl Strategy<Value = MessageType> {
        prop_oneof![
            Just(MessageType::Model),
            Just(MessageType::Predictions),
            Just(MessageType::BenchRequest),
            Just(MessageType::ModelRequest),
        ]
    }

    #[test]
    fn empty_bench_request_is_21_bytes() {
        let m = Message::new(MessageType::BenchRequest, 3, 7, vec![]);
        let frame = encode_message(&m).unwrap();
        assert_eq!(frame.len(), 21);
        assert_eq!(&frame[..4], b"FPN1");
        assert_eq!(decode_message(&frame).unwrap(), m);
    }

    #[test]
    fn flipped_payload_byte_is_corruption() {
        let m = Message::new(MessageType::Model, 1, 2, vec![9, 8, 7, 6]);
        let mut frame = encode_message(&m).unwrap();
        frame[HEADER_LEN + 1] ^= 0x40;
        assert!(matches!(decode_message(&frame), Err(FedPaeError::Corruption { .. })));
    }

    #[test]
    fn malformed_frames_are_typed_errors() {
        let frame = encode_message(&Message::new(MessageType::Model, 1, 2, vec![1, 2, 3])).unwrap();
        let mut bad_magic = frame.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_message(&bad_magic), Err(FedPaeError::Protocol(_))));
        let mut bad_type = frame.clone();
        bad_type[4] = 99;
        assert!(matches!(decode_message(&bad_type), Err(FedPaeError::Protocol(_))));
        assert!(matches!(
            decode_message(&frame[..frame.len() - 1]),
            Err(FedPaeError::IncompleteFrame { needed: 1 })
        ));
        assert!(matches!(
            decode_message(&frame[..2]),
            Err(FedPaeError::IncompleteFrame { .. })
        ));
        let mut trailing = frame.clone();
        trailing.push(0);
        assert!(matches!(decode_message(&trailing), Err(FedPaeError::Protocol(_))));
    }

    #[test]
    fn stream_decoder_reassembles_chunks() {
        let msgs: Vec<Message> = (0..5)
            .map(|i| Message::new(MessageType::Predictions, i, i + 1, vec![i as u8; i as usize * 7]))
            .collect();
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_message(m).unwrap()).collect();
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for chunk in stream.chunks(3) {
            dec.push(chunk);
            while let Some(m) = dec.next_message().unwrap() {
                got.push(m);
            }
        }
        assert_eq!(got, msgs);
        assert_eq!(dec.pending(), 0);
    }

    #[test]
    fn predictions_payload_roundtrip_is_bit_exact() {
        let p = PredictionsPayload {
            id: ModelId {
                origin_client: 4,
                slot: 2,
                content_hash: 77,
            },
            architecture: Architecture::Mlp { hidden: vec![64, 32] },
            n_classes: 3,
            column: vec![0.1f64, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        };
        let bytes = encode_predictions(&p).unwrap();
        let back: PredictionsPayload<f64> = decode_predictions(&bytes).unwrap();
        assert_eq!(back, p);
        assert!(decode_predictions::<f32>(&bytes).is_err());
        assert!(decode_predictions::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn frames_roundtrip(kind in kinds(), sender: u32, receiver: u32,
                            payload in proptest::collection::vec(any::<u8>(), 0..512)) {
            let m = Message::new(kind, sender, receiver, payload);
            let frame = encode_message(&m).unwrap();
            prop_assert_eq!(frame.len(), m.frame_len());
            prop_assert_eq!(decode_message(&frame).unwrap(), m);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_message(&bytes);
            let _ = decode_predictions::<f32>(&bytes);
            let mut framed = FRAME_MAGIC.to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_message(&framed);
        }
    }
}
