//! Stream transport for the frame codec over `std::net`.
//!
//! One request/response exchange per connection: the requester writes its
//! frames and half-closes; the peer answers every request and closes.

use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};

use super::codec::{decode_model_id, encode_message, encode_model_id, FrameDecoder, Message, MessageType};
use crate::error::{FedPaeError, Result};
use crate::learners::{decode_predictor, encode_predictor, Predictor};
use crate::scalar::Scalar;
use crate::selection::ModelId;

pub fn write_message(w: &mut impl Write, m: &Message) -> Result<()> {
    w.write_all(&encode_message(m)?)
        .map_err(|e| FedPaeError::io("peer stream", e))
}

/// Yields whole messages from a byte stream.
pub struct MessageReader<R> {
    inner: R,
    decoder: FrameDecoder,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        MessageReader {
            inner,
            decoder: FrameDecoder::new(),
        }
    }

    /// The next message, or `None` at a clean end of stream.
    pub fn next_message(&mut self) -> Result<Option<Message>> {
        let mut buf = [0u8; 8192];
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(Some(m));
            }
            let n = match self.inner.read(&mut buf) {
                Ok(n) => n,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(FedPaeError::io("peer stream", e)),
            };
            if n == 0 {
                return match self.decoder.pending() {
                    0 => Ok(None),
                    left => Err(FedPaeError::Protocol(format!(
                        "stream ended inside a frame ({left} bytes)"
                    ))),
                };
            }
            self.decoder.push(&buf[..n]);
        }
    }
}

/// Answers the requests on one connection from the models `owner` trained.
/// Returns the number of frames sent back.
pub fn serve_connection<T: Scalar>(stream: TcpStream, owner: u32, models: &[Predictor<T>]) -> Result<usize> {
    let mut writer = stream.try_clone().map_err(|e| FedPaeError::io("peer stream", e))?;
    let mut reader = MessageReader::new(stream);
    let mut sent = 0;
    while let Some(request) = reader.next_message()? {
        if request.receiver != owner {
            return Err(FedPaeError::Protocol(format!(
                "request for client {} reached client {owner}",
                request.receiver
            )));
        }
        let replies: Vec<&Predictor<T>> = match request.kind {
            MessageType::BenchRequest => models.iter().collect(),
            MessageType::ModelRequest => {
                let id = decode_model_id(&request.payload)?;
                models.iter().filter(|p| ModelId::of(*p) == id).collect()
            }
            other => {
                return Err(FedPaeError::Protocol(format!("{} is not a request", other.name())));
            }
        };
        for p in replies {
            let m = Message::new(MessageType::Model, owner, request.sender, encode_predictor(p));
            write_message(&mut writer, &m)?;
            sent += 1;
        }
    }
    writer.flush().map_err(|e| FedPaeError::io("peer stream", e))?;
    Ok(sent)
}

/// Accepts `connections` connections on `listener`, serving each in turn.
pub fn serve<T: Scalar>(
    listener: &TcpListener,
    owner: u32,
    models: &[Predictor<T>],
    connections: usize,
) -> Result<usize> {
    let mut sent = 0;
    for _ in 0..connections {
        let (stream, _) = listener.accept().map_err(|e| FedPaeError::io("listener", e))?;
        sent += serve_connection(stream, owner, models)?;
    }
    Ok(sent)
}

fn exchange<T: Scalar>(addr: impl ToSocketAddrs, requests: &[Message]) -> Result<Vec<Predictor<T>>> {
    let mut stream = TcpStream::connect(addr).map_err(|e| FedPaeError::io("peer address", e))?;
    for m in requests {
        write_message(&mut stream, m)?;
    }
    stream
        .shutdown(Shutdown::Write)
        .map_err(|e| FedPaeError::io("peer stream", e))?;
    let mut reader = MessageReader::new(stream);
    let mut models = Vec::new();
    while let Some(reply) = reader.next_message()? {
        if reply.kind != MessageType::Model {
            return Err(FedPaeError::Protocol(format!("unexpected {} reply", reply.kind.name())));
        }
        models.push(decode_predictor(&reply.payload)?);
    }
    Ok(models)
}

/// Downloads every local model of `peer`.
pub fn fetch_bench<T: Scalar>(addr: impl ToSocketAddrs, me: u32, peer: u32) -> Result<Vec<Predictor<T>>> {
    exchange(addr, &[Message::new(MessageType::BenchRequest, me, peer, Vec::new())])
}

/// Downloads the listed models of `peer`; unknown ids are silently absent.
pub fn fetch_models<T: Scalar>(
    addr: impl ToSocketAddrs,
    me: u32,
    peer: u32,
    ids: &[ModelId],
) -> Result<Vec<Predictor<T>>> {
    let requests: Vec<Message> = ids
        .iter()
        .map(|id| Message::new(MessageType::ModelRequest, me, peer, encode_model_id(id)))
        .collect();
    exchange(addr, &requests)
}
