//! Fixed pool of pre-allocated frame slots shared through counted leases.
//!
//! Slot lease word: bit 31 marks a slot being filled by the writer, the low
//! bits count outstanding leases. The pool itself holds one lease on the
//! newest frame so that [`SlotPool::latest`] can hand out further leases; it
//! gives that lease up when a newer frame is stored. A slot is reused only
//! when its count is zero, so bytes seen through a lease never change.
//!
//! Overflow policy is drop-newest: when every slot is leased the incoming
//! frame is discarded and counted.

use std::ops::Deref;
use std::sync::atomic::{fence, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use crate::IngressError;

const WRITING: u32 = 1 << 31;
const NONE: usize = usize::MAX;

struct Slot {
    leases: AtomicU32,
    len: AtomicUsize,
    source_ts: AtomicU64,
    seq: AtomicU64,
    data: RwLock<Box<[u8]>>,
}

/// Snapshot of pool counters. `frames_ingested == frames_stored + dropped`
/// holds in every snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolCounters {
    pub frames_ingested: u64,
    /// Frames copied into a slot (each grants the pool's own lease).
    pub frames_stored: u64,
    /// Frames discarded: pool exhausted or larger than a slot.
    pub dropped: u64,
    /// Subset of `dropped` caused by size.
    pub oversize: u64,
}

/// Counters written by the single pool writer under a sequence lock so a
/// reader never observes a half-applied update.
#[derive(Default)]
struct SeqCounters {
    version: AtomicU64,
    ingested: AtomicU64,
    stored: AtomicU64,
    dropped: AtomicU64,
    oversize: AtomicU64,
}

impl SeqCounters {
    fn record(&self, stored: bool, oversize: bool) {
        let v = self.version.load(Ordering::Relaxed);
        self.version.store(v + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        self.ingested.fetch_add(1, Ordering::Relaxed);
        if stored {
            self.stored.fetch_add(1, Ordering::Relaxed);
        } else {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        if oversize {
            self.oversize.fetch_add(1, Ordering::Relaxed);
        }
        self.version.store(v + 2, Ordering::Release);
    }

    fn snapshot(&self) -> PoolCounters {
        loop {
            let v1 = self.version.load(Ordering::Acquire);
            if v1 % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let snap = PoolCounters {
                frames_ingested: self.ingested.load(Ordering::Relaxed),
                frames_stored: self.stored.load(Ordering::Relaxed),
                dropped: self.dropped.load(Ordering::Relaxed),
                oversize: self.oversize.load(Ordering::Relaxed),
            };
            fence(Ordering::Acquire);
            if self.version.load(Ordering::Relaxed) == v1 {
                return snap;
            }
        }
    }
}

pub struct SlotPool {
    slots: Box<[Slot]>,
    slot_size: usize,
    latest: AtomicUsize,
    counters: SeqCounters,
    leases_granted: AtomicU64,
}

impl std::fmt::Debug for SlotPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlotPool")
            .field("slot_count", &self.slot_count())
            .field("slot_size", &self.slot_size)
            .field("counters", &self.counters())
            .finish()
    }
}

impl SlotPool {
    /// Allocates every slot up front and returns the pool with its unique writer.
    pub fn new(slot_count: usize, slot_size: usize) -> Result<(Arc<SlotPool>, PoolWriter), IngressError> {
        if slot_count == 0 || slot_size == 0 {
            return Err(IngressError::InvalidSpec("slot pool needs >= 1 slot of >= 1 byte".into()));
        }
        let slots = (0..slot_count)
            .map(|_| Slot {
                leases: AtomicU32::new(0),
                len: AtomicUsize::new(0),
                source_ts: AtomicU64::new(0),
                seq: AtomicU64::new(0),
                data: RwLock::new(vec![0u8; slot_size].into_boxed_slice()),
            })
            .collect();
        let pool = Arc::new(SlotPool {
            slots,
            slot_size,
            latest: AtomicUsize::new(NONE),
            counters: SeqCounters::default(),
            leases_granted: AtomicU64::new(0),
        });
        Ok((pool.clone(), PoolWriter { pool, next: 0 }))
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_size(&self) -> usize {
        self.slot_size
    }

    pub fn counters(&self) -> PoolCounters {
        self.counters.snapshot()
    }

    /// Leases handed to consumers through [`SlotPool::latest`] or clones.
    pub fn consumer_leases_granted(&self) -> u64 {
        self.leases_granted.load(Ordering::Relaxed)
    }

    /// Outstanding leases on a slot (including the pool's own).
    pub fn lease_count(&self, index: usize) -> u32 {
        self.slots[index].leases.load(Ordering::Acquire) & !WRITING
    }

    /// Sum of all outstanding leases.
    pub fn total_leases(&self) -> u32 {
        (0..self.slots.len()).map(|i| self.lease_count(i)).sum()
    }

    /// Address of a slot's storage; stable for the life of the pool.
    pub fn slot_addr(&self, index: usize) -> usize {
        self.slots[index].data.read().unwrap().as_ptr() as usize
    }

    /// Leases the newest stored frame.
    pub fn latest(self: &Arc<Self>) -> Option<SlotLease> {
        loop {
            let index = self.latest.load(Ordering::Acquire);
            if index == NONE {
                return None;
            }
            let slot = &self.slots[index];
            let cur = slot.leases.load(Ordering::Acquire);
            if cur == 0 || cur & WRITING != 0 {
                // Released and possibly being refilled; `latest` has moved on.
                std::hint::spin_loop();
                continue;
            }
            if slot
                .leases
                .compare_exchange(cur, cur + 1, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                self.leases_granted.fetch_add(1, Ordering::Relaxed);
                return Some(self.lease_of(index));
            }
        }
    }

    fn lease_of(self: &Arc<Self>, index: usize) -> SlotLease {
        let slot = &self.slots[index];
        SlotLease {
            pool: self.clone(),
            index,
            len: slot.len.load(Ordering::Acquire),
            source_ts: slot.source_ts.load(Ordering::Acquire),
            seq: slot.seq.load(Ordering::Acquire),
        }
    }

    fn release(&self, index: usize) {
        let prev = self.slots[index].leases.fetch_sub(1, Ordering::AcqRel);
        debug_assert!(prev & !WRITING > 0, "lease underflow on slot {index}");
    }
}

/// The only handle that may store frames into a pool.
pub struct PoolWriter {
    pool: Arc<SlotPool>,
    next: usize,
}

impl PoolWriter {
    pub fn pool(&self) -> &Arc<SlotPool> {
        &self.pool
    }

    /// Copies `frame` into a free slot and publishes it as the newest frame.
    /// Returns the slot index.
    pub fn ingest(&mut self, source_ts: u64, seq: u64, frame: &[u8]) -> Result<usize, IngressError> {
        let pool = &*self.pool;
        if frame.len() > pool.slot_size {
            pool.counters.record(false, true);
            return Err(IngressError::TooLarge { len: frame.len(), max: pool.slot_size });
        }
        let n = pool.slots.len();
        let claimed = (0..n).map(|k| (self.next + k) % n).find(|&i| {
            pool.slots[i]
                .leases
                .compare_exchange(0, WRITING, Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
        });
        let Some(index) = claimed else {
            pool.counters.record(false, false);
            return Err(IngressError::PoolExhausted);
        };
        self.next = (index + 1) % n;

        let slot = &pool.slots[index];
        {
            let mut data = slot.data.write().unwrap();
            data[..frame.len()].copy_from_slice(frame);
        }
        slot.len.store(frame.len(), Ordering::Release);
        slot.source_ts.store(source_ts, Ordering::Release);
        slot.seq.store(seq, Ordering::Release);
        slot.leases.store(1, Ordering::Release);

        let previous = pool.latest.swap(index, Ordering::AcqRel);
        if previous != NONE {
            pool.release(previous);
        }
        pool.counters.record(true, false);
        Ok(index)
    }
}

/// Shared, read-only handle to one stored frame. Cloning adds a lease;
/// dropping releases it.
pub struct SlotLease {
    pool: Arc<SlotPool>,
    index: usize,
    len: usize,
    source_ts: u64,
    seq: u64,
}

impl std::fmt::Debug for SlotLease {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlotLease")
            .field("slot", &self.index)
            .field("len", &self.len)
            .field("seq", &self.seq)
            .finish()
    }
}

impl SlotLease {
    pub fn slot_index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn source_ts(&self) -> u64 {
        self.source_ts
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn pool(&self) -> &Arc<SlotPool> {
        &self.pool
    }

    /// Borrow the frame bytes in place.
    pub fn bytes(&self) -> FrameView<'_> {
        FrameView { guard: self.pool.slots[self.index].data.read().unwrap(), len: self.len }
    }
}

impl Clone for SlotLease {
    fn clone(&self) -> Self {
        self.pool.slots[self.index].leases.fetch_add(1, Ordering::AcqRel);
        self.pool.leases_granted.fetch_add(1, Ordering::Relaxed);
        SlotLease { pool: self.pool.clone(), ..*self }
    }
}

impl Drop for SlotLease {
    fn drop(&mut self) {
        self.pool.release(self.index);
    }
}

/// Borrowed view of a leased frame.
pub struct FrameView<'a> {
    guard: RwLockReadGuard<'a, Box<[u8]>>,
    len: usize,
}

impl Deref for FrameView<'_> {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.guard[..self.len]
    }
}
