//! Bit-exact frame encoding shared by every socket peer.
//!
//! A frame is a `u32` little-endian body length followed by the body:
//!
//! ```text
//! topic_len  u16 LE
//! topic      topic_len bytes of UTF-8
//! seq        u64 LE
//! source_ts  u64 LE
//! publish_ts u64 LE
//! content    u8
//! pay_len    u32 LE
//! payload    pay_len bytes
//! ```

use std::io::{self, Read, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::envelope::{ContentType, Envelope};

/// Bytes of fixed-width fields in an encoded envelope.
pub const ENVELOPE_OVERHEAD: usize = 2 + 8 + 8 + 8 + 1 + 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("topic name is not UTF-8")]
    BadTopic,
    #[error("topic name longer than 65535 bytes")]
    TopicTooLong,
    #[error("unknown content type {0}")]
    BadContentType(u8),
    #[error("{0} trailing bytes after envelope")]
    Trailing(usize),
    #[error("frame of {len} bytes exceeds limit of {max}")]
    FrameTooLarge { len: usize, max: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_envelope(env: &Envelope) -> Result<Vec<u8>, WireError> {
    let topic = env.topic.as_bytes();
    if topic.len() > u16::MAX as usize {
        return Err(WireError::TopicTooLong);
    }
    let mut out = Vec::with_capacity(ENVELOPE_OVERHEAD + topic.len() + env.payload.len());
    out.extend_from_slice(&(topic.len() as u16).to_le_bytes());
    out.extend_from_slice(topic);
    out.extend_from_slice(&env.seq.to_le_bytes());
    out.extend_from_slice(&env.source_ts.to_le_bytes());
    out.extend_from_slice(&env.publish_ts.to_le_bytes());
    out.push(env.content_type as u8);
    out.extend_from_slice(&(env.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&env.payload);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(WireError::Truncated { offset: self.buf.len() })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_envelope(body: &[u8]) -> Result<Envelope, WireError> {
    let mut c = Cursor { buf: body, pos: 0 };
    let topic_len = c.u16()? as usize;
    let topic = std::str::from_utf8(c.take(topic_len)?).map_err(|_| WireError::BadTopic)?;
    let seq = c.u64()?;
    let source_ts = c.u64()?;
    let publish_ts = c.u64()?;
    let ct = c.take(1)?[0];
    let content_type = ContentType::from_u8(ct).ok_or(WireError::BadContentType(ct))?;
    let len = c.u32()? as usize;
    let payload = c.take(len)?;
    if c.pos != body.len() {
        return Err(WireError::Trailing(body.len() - c.pos));
    }
    Ok(Envelope {
        topic: Arc::from(topic),
        seq,
        source_ts,
        publish_ts,
        content_type,
        payload: Arc::from(payload),
    })
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame body. `Ok(None)` signals a clean end of stream before the
/// length prefix.
pub fn read_frame<R: Read>(r: &mut R, max: usize) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > max {
        return Err(WireError::FrameTooLarge { len, max });
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
