//! JBLB replay bags.
//!
//! ```text
//! magic "JBLB" | version u16 LE
//! topic count u32 LE, then per topic:
//!   name len u16 LE | name UTF-8 | content_type u8 | meta len u16 LE | meta UTF-8 JSON
//! records until EOF:
//!   topic index u32 LE | timestamp_ns u64 LE | payload len u32 LE | payload
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use lambda_transport::ContentType;
use serde_json::Value;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"JBLB";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum BagError {
    #[error("malformed bag at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("invalid bag: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagTopic {
    pub name: String,
    pub content_type: ContentType,
    /// JSON object; `{}` when the topic has no metadata.
    pub metadata: Value,
}

impl BagTopic {
    pub fn new(name: &str, content_type: ContentType, metadata: Value) -> Self {
        Self { name: name.to_string(), content_type, metadata }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BagRecord {
    pub topic: u32,
    pub ts: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bag {
    pub topics: Vec<BagTopic>,
    pub records: Vec<BagRecord>,
}

impl Bag {
    pub fn topic_index(&self, name: &str) -> Option<u32> {
        self.topics.iter().position(|t| t.name == name).map(|i| i as u32)
    }

    /// Records per topic, in topic-table order.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.topics.len()];
        for r in &self.records {
            c[r.topic as usize] += 1;
        }
        c
    }

    pub fn duration_ns(&self) -> u64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.ts - a.ts,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), BagError> {
        for (i, t) in self.topics.iter().enumerate() {
            if t.name.is_empty() || t.name.len() > u16::MAX as usize {
                return Err(BagError::Invalid(format!("topic {i}: bad name length")));
            }
        }
        let mut last = 0;
        for (i, r) in self.records.iter().enumerate() {
            if r.topic as usize >= self.topics.len() {
                return Err(BagError::Invalid(format!("record {i}: topic index {} out of range", r.topic)));
            }
            if r.ts < last {
                return Err(BagError::Invalid(format!("record {i}: timestamp goes backwards")));
            }
            if r.payload.len() > u32::MAX as usize {
                return Err(BagError::Invalid(format!("record {i}: payload too large")));
            }
            last = r.ts;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), BagError> {
        self.validate()?;
        let mut w = BufWriter::new(w);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.topics.len() as u32).to_le_bytes())?;
        for t in &self.topics {
            let meta = serde_json::to_string(&t.metadata).map_err(|e| BagError::Invalid(e.to_string()))?;
            if meta.len() > u16::MAX as usize {
                return Err(BagError::Invalid(format!("metadata of {} too long", t.name)));
            }
            w.write_all(&(t.name.len() as u16).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&[t.content_type as u8])?;
            w.write_all(&(meta.len() as u16).to_le_bytes())?;
            w.write_all(meta.as_bytes())?;
        }
        for r in &self.records {
            w.write_all(&r.topic.to_le_bytes())?;
            w.write_all(&r.ts.to_le_bytes())?;
            w.write_all(&(r.payload.len() as u32).to_le_bytes())?;
            w.write_all(&r.payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, BagError> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), BagError> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Bag, BagError> {
        Bag::read_from(BufReader::new(File::open(path)?))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Bag, BagError> {
        Bag::read_from(bytes)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Bag, BagError> {
        let mut c = Cursor { r, offset: 0 };
        let magic = c.take(4, "magic")?;
        if magic != MAGIC {
            return Err(c.bad(0, "bad magic"));
        }
        let at = c.offset;
        let version = u16::from_le_bytes(c.array("version")?);
        if version != VERSION {
            return Err(c.bad(at, &format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(c.array("topic count")?);
        let mut topics = Vec::new();
        for _ in 0..count {
            let at = c.offset;
            let len = u16::from_le_bytes(c.array("topic name length")?) as usize;
            if len == 0 {
                return Err(c.bad(at, "empty topic name"));
            }
            let at = c.offset;
            let name = String::from_utf8(c.take(len, "topic name")?).map_err(|_| c.bad(at, "topic name is not UTF-8"))?;
            let at = c.offset;
            let [ct] = c.array("content type")?;
            let content_type = ContentType::from_u8(ct).ok_or_else(|| c.bad(at, &format!("unknown content type {ct}")))?;
            let mlen = u16::from_le_bytes(c.array("metadata length")?) as usize;
            let at = c.offset;
            let raw = c.take(mlen, "metadata")?;
            let metadata = if raw.is_empty() {
                Value::Object(Default::default())
            } else {
                serde_json::from_slice(&raw).map_err(|e| c.bad(at, &format!("metadata is not JSON: {e}")))?
            };
            topics.push(BagTopic { name, content_type, metadata });
        }
        let mut records = Vec::new();
        let mut last = 0u64;
        loop {
            let at = c.offset;
            let mut head = [0u8; 4];
            match c.fill_or_eof(&mut head)? {
                0 => break,
                4 => {}
                _ => return Err(c.bad(at, "truncated record header")),
            }
            let topic = u32::from_le_bytes(head);
            if topic >= count {
                return Err(c.bad(at, &format!("topic index {topic} out of range")));
            }
            let at_ts = c.offset;
            let ts = u64::from_le_bytes(c.array("timestamp")?);
            if ts < last {
                return Err(c.bad(at_ts, "timestamp goes backwards"));
            }
            last = ts;
            let len = u32::from_le_bytes(c.array("payload length")?) as usize;
            let payload = c.take(len, "payload")?;
            records.push(BagRecord { topic, ts, payload });
        }
        Ok(Bag { topics, records })
    }
}

struct Cursor<R> {
    r: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bad(&self, offset: u64, reason: &str) -> BagError {
        BagError::Malformed { offset, reason: reason.to_string() }
    }

    /// Reads as much of `buf` as available; returns the byte count.
    fn fill_or_eof(&mut self, buf: &mut [u8]) -> Result<usize, BagError> {
        let mut got = 0;
        while got < buf.len() {
            match self.r.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += got as u64;
        Ok(got)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>, BagError> {
        let start = self.offset;
        let mut buf = Vec::new();
        let got = (&mut self.r).take(n as u64).read_to_end(&mut buf)?;
        self.offset += got as u64;
        if got < n {
            return Err(self.bad(start + got as u64, &format!("truncated {what}")));
        }
        Ok(buf)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], BagError> {
        let start = self.offset;
        let mut a = [0u8; N];
        let got = self.fill_or_eof(&mut a)?;
        if got < N {
            return Err(self.bad(start + got as u64, &format!("truncated {what}")));
        }
        Ok(a)
    }
}
