//! Overwriting single-writer ring with per-slot sequence locks.
//!
//! The writer never waits for readers and readers never wait for the
//! writer. Each slot carries a version word: `2*i + 1` while record `i` is
//! being written, `2*i + 2` once it is complete. A reader copies the slot
//! and accepts the copy only if the version before and after equals the
//! completed version of the record it wanted. Payload bytes live in
//! `AtomicU64` words so concurrent copies are well-defined.

use std::sync::atomic::{fence, AtomicU64, Ordering};
use std::sync::Arc;

use crate::IngressError;

/// A copied low-volume record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingRecord {
    pub source_ts: u64,
    pub seq: u64,
    pub payload: Vec<u8>,
}

struct Slot {
    version: AtomicU64,
    source_ts: AtomicU64,
    seq: AtomicU64,
    len: AtomicU64,
    words: Box<[AtomicU64]>,
}

pub struct RingBuffer {
    slots: Box<[Slot]>,
    record_max: usize,
    /// Number of records ever written.
    head: AtomicU64,
    rejected: AtomicU64,
}

impl std::fmt::Debug for RingBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RingBuffer")
            .field("capacity", &self.capacity())
            .field("written", &self.written())
            .finish()
    }
}

impl RingBuffer {
    /// Creates the ring and its unique writer handle.
    pub fn new(capacity: usize, record_max: usize) -> Result<(Arc<RingBuffer>, RingWriter), IngressError> {
        if capacity == 0 {
            return Err(IngressError::InvalidSpec("ring capacity must be >= 1".into()));
        }
        let words = record_max.div_ceil(8);
        let slots = (0..capacity)
            .map(|_| Slot {
                version: AtomicU64::new(0),
                source_ts: AtomicU64::new(0),
                seq: AtomicU64::new(0),
                len: AtomicU64::new(0),
                words: (0..words).map(|_| AtomicU64::new(0)).collect(),
            })
            .collect();
        let ring = Arc::new(RingBuffer { slots, record_max, head: AtomicU64::new(0), rejected: AtomicU64::new(0) });
        Ok((ring.clone(), RingWriter { ring }))
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn record_max(&self) -> usize {
        self.record_max
    }

    /// Records ever written, including overwritten ones.
    pub fn written(&self) -> u64 {
        self.head.load(Ordering::Acquire)
    }

    /// Records refused because they exceeded `record_max`.
    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::Relaxed)
    }

    fn try_read(&self, index: u64) -> Option<RingRecord> {
        let slot = &self.slots[(index % self.slots.len() as u64) as usize];
        let want = 2 * index + 2;
        let v1 = slot.version.load(Ordering::Acquire);
        if v1 != want {
            return None;
        }
        let source_ts = slot.source_ts.load(Ordering::Relaxed);
        let seq = slot.seq.load(Ordering::Relaxed);
        let len = (slot.len.load(Ordering::Relaxed) as usize).min(self.record_max);
        let mut payload = Vec::with_capacity(len);
        for w in slot.words.iter().take(len.div_ceil(8)) {
            payload.extend_from_slice(&w.load(Ordering::Relaxed).to_le_bytes());
        }
        payload.truncate(len);
        fence(Ordering::Acquire);
        let v2 = slot.version.load(Ordering::Relaxed);
        (v1 == v2).then_some(RingRecord { source_ts, seq, payload })
    }

    /// One retry, then give up: the record was overwritten.
    fn read(&self, index: u64) -> Option<RingRecord> {
        self.try_read(index).or_else(|| self.try_read(index))
    }

    /// Newest record, if any.
    pub fn latest(&self) -> Option<RingRecord> {
        for _ in 0..4 {
            let head = self.written();
            if head == 0 {
                return None;
            }
            if let Some(r) = self.read(head - 1) {
                return Some(r);
            }
        }
        None
    }

    /// Up to `n` newest records, oldest first. Records overwritten while the
    /// snapshot is taken are left out.
    pub fn window(&self, n: usize) -> Vec<RingRecord> {
        let head = self.written();
        let n = n.min(self.capacity()) as u64;
        let start = head.saturating_sub(n);
        (start..head).filter_map(|i| self.read(i)).collect()
    }

    /// Every record written since `cursor`, advancing the cursor. The second
    /// value counts records that were overwritten before they could be read.
    pub fn read_since(&self, cursor: &mut u64) -> (Vec<RingRecord>, u64) {
        let head = self.written();
        let oldest = head.saturating_sub(self.capacity() as u64);
        let mut missed = oldest.saturating_sub(*cursor);
        let mut out = Vec::new();
        for i in (*cursor).max(oldest)..head {
            match self.read(i) {
                Some(r) => out.push(r),
                None => missed += 1,
            }
        }
        *cursor = head;
        (out, missed)
    }
}

/// The only handle that may write to a ring.
pub struct RingWriter {
    ring: Arc<RingBuffer>,
}

impl RingWriter {
    pub fn ring(&self) -> &Arc<RingBuffer> {
        &self.ring
    }

    pub fn push(&mut self, source_ts: u64, seq: u64, payload: &[u8]) -> Result<(), IngressError> {
        let ring = &*self.ring;
        if payload.len() > ring.record_max {
            ring.rejected.fetch_add(1, Ordering::Relaxed);
            return Err(IngressError::TooLarge { len: payload.len(), max: ring.record_max });
        }
        let index = ring.head.load(Ordering::Relaxed);
        let slot = &ring.slots[(index % ring.slots.len() as u64) as usize];
        slot.version.store(2 * index + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        slot.source_ts.store(source_ts, Ordering::Relaxed);
        slot.seq.store(seq, Ordering::Relaxed);
        slot.len.store(payload.len() as u64, Ordering::Relaxed);
        for (w, chunk) in slot.words.iter().zip(payload.chunks(8)) {
            let mut bytes = [0u8; 8];
            bytes[..chunk.len()].copy_from_slice(chunk);
            w.store(u64::from_le_bytes(bytes), Ordering::Relaxed);
        }
        slot.version.store(2 * index + 2, Ordering::Release);
        ring.head.store(index + 1, Ordering::Release);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(capacity: usize, n: u64) -> Arc<RingBuffer> {
        let (ring, mut w) = RingBuffer::new(capacity, 16).unwrap();
        for i in 1..=n {
            w.push(i * 10, i, &i.to_le_bytes()).unwrap();
        }
        ring
    }

    #[test]
    fn empty_ring() {
        let ring = filled(4, 0);
        assert!(ring.latest().is_none());
        assert!(ring.window(3).is_empty());
    }

    #[test]
    fn keeps_newest_capacity_records() {
        let ring = filled(64, 70);
        let w = ring.window(1000);
        assert_eq!(w.len(), 64);
        assert_eq!(w.first().unwrap().seq, 7);
        assert_eq!(w.last().unwrap().seq, 70);
    }

    #[test]
    fn window_is_oldest_first_suffix() {
        let ring = filled(4, 6);
        let seqs: Vec<u64> = ring.window(4).iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![3, 4, 5, 6]);
        assert_eq!(filled(4, 3).window(10).len(), 3);
    }

    #[test]
    fn latest_is_newest() {
        let ring = filled(8, 3);
        let r = ring.latest().unwrap();
        assert_eq!((r.source_ts, r.seq, r.payload.clone()), (30, 3, 3u64.to_le_bytes().to_vec()));
    }

    #[test]
    fn odd_sized_payloads_round_trip() {
        let (ring, mut w) = RingBuffer::new(2, 13).unwrap();
        let payload: Vec<u8> = (0..13).collect();
        w.push(1, 1, &payload).unwrap();
        w.push(2, 2, &[]).unwrap();
        assert_eq!(ring.window(2)[0].payload, payload);
        assert!(ring.latest().unwrap().payload.is_empty());
    }

    #[test]
    fn oversize_rejected() {
        let (ring, mut w) = RingBuffer::new(2, 4).unwrap();
        assert_eq!(w.push(0, 0, &[0; 5]), Err(IngressError::TooLarge { len: 5, max: 4 }));
        assert_eq!(ring.rejected(), 1);
        assert_eq!(ring.written(), 0);
    }

    #[test]
    fn read_since_counts_overwrites() {
        let ring = filled(4, 10);
        let mut cursor = 0;
        let (recs, missed) = ring.read_since(&mut cursor);
        assert_eq!(recs.len(), 4);
        assert_eq!(missed, 6);
        assert_eq!(cursor, 10);
        assert_eq!(ring.read_since(&mut cursor), (vec![], 0));
    }

    #[test]
    fn zero_capacity_is_invalid() {
        assert!(RingBuffer::new(0, 8).is_err());
    }
}
