use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use lambda_transport::{Envelope, Subscription};
use log::{debug, warn};

use crate::pool::{PoolWriter, SlotLease, SlotPool};
use crate::ring::{RingBuffer, RingRecord, RingWriter};
use crate::trigger::{TriggerOutcome, TriggerSignal};
use crate::{IngressError, DEFAULT_RECORD_MAX, DEFAULT_SLOT_SIZE};

const RECV_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelClass {
    /// Copied into a ring; every read returns a copy.
    LowVolume,
    /// Copied once into a pool slot; reads return leases.
    HighVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSpec {
    pub class: ChannelClass,
    /// Ring depth (low volume) or slot count (high volume).
    pub capacity: usize,
    pub slot_size: usize,
    pub record_max: usize,
}

impl ChannelSpec {
    pub fn low_volume(depth: usize) -> Self {
        Self { class: ChannelClass::LowVolume, capacity: depth, slot_size: DEFAULT_SLOT_SIZE, record_max: DEFAULT_RECORD_MAX }
    }

    pub fn high_volume(slots: usize) -> Self {
        Self { class: ChannelClass::HighVolume, capacity: slots, slot_size: DEFAULT_SLOT_SIZE, record_max: DEFAULT_RECORD_MAX }
    }

    pub fn with_slot_size(mut self, bytes: usize) -> Self {
        self.slot_size = bytes;
        self
    }

    pub fn with_record_max(mut self, bytes: usize) -> Self {
        self.record_max = bytes;
        self
    }
}

pub type ChannelId = usize;

/// Newest item on a channel.
#[derive(Debug)]
pub enum Item {
    Record(RingRecord),
    Frame(SlotLease),
}

/// Per-channel counters exported in host status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelCounters {
    pub topic: String,
    pub class: ChannelClass,
    /// Envelopes taken off the subscription.
    pub received: u64,
    /// Envelopes lost to transport history overflow.
    pub transport_dropped: u64,
    /// Frames dropped by the pool, or records refused by the ring.
    pub rejected: u64,
    /// Leases granted to consumers (high volume only).
    pub leases_granted: u64,
}

enum Storage {
    Ring(Arc<RingBuffer>),
    Pool(Arc<SlotPool>),
}

enum Writer {
    Ring(RingWriter),
    Pool(PoolWriter),
}

struct Channel {
    topic: String,
    storage: Storage,
    sub: Arc<Subscription>,
    received: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

/// Staging area feeding one execution thread from many receiver threads.
///
/// `latest`, `window` and `await_trigger` are meant for the single consumer
/// thread; receivers are internal.
pub struct IngressHub {
    channels: Vec<Channel>,
    by_topic: HashMap<String, ChannelId>,
    trigger_topic: Option<String>,
    trigger: Arc<TriggerSignal>,
    stop: Arc<AtomicBool>,
    transport_lost: Arc<AtomicBool>,
}

impl IngressHub {
    /// At most one trigger topic per hub.
    pub fn new(trigger_topic: Option<String>) -> Self {
        Self {
            channels: Vec::new(),
            by_topic: HashMap::new(),
            trigger_topic,
            trigger: Arc::new(TriggerSignal::new()),
            stop: Arc::new(AtomicBool::new(false)),
            transport_lost: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn trigger_topic(&self) -> Option<&str> {
        self.trigger_topic.as_deref()
    }

    /// Starts a receiver thread draining `sub` into a new ring or pool.
    pub fn attach(&mut self, sub: Subscription, spec: ChannelSpec) -> Result<ChannelId, IngressError> {
        let topic = sub.topic().to_string();
        if self.by_topic.contains_key(&topic) {
            return Err(IngressError::DuplicateTopic(topic));
        }
        let (storage, writer) = match spec.class {
            ChannelClass::LowVolume => {
                let (ring, w) = RingBuffer::new(spec.capacity, spec.record_max)?;
                (Storage::Ring(ring), Writer::Ring(w))
            }
            ChannelClass::HighVolume => {
                let (pool, w) = SlotPool::new(spec.capacity, spec.slot_size)?;
                (Storage::Pool(pool), Writer::Pool(w))
            }
        };
        let sub = Arc::new(sub);
        let received = Arc::new(AtomicU64::new(0));
        let trigger = (self.trigger_topic.as_deref() == Some(topic.as_str())).then(|| self.trigger.clone());
        let thread = {
            let (sub, received, stop, lost) = (sub.clone(), received.clone(), self.stop.clone(), self.transport_lost.clone());
            thread::Builder::new()
                .name(format!("ingress:{topic}"))
                .spawn(move || receive_loop(sub, writer, received, trigger, stop, lost))
                .map_err(|e| IngressError::InvalidSpec(format!("cannot spawn receiver: {e}")))?
        };
        let id = self.channels.len();
        self.channels.push(Channel { topic: topic.clone(), storage, sub, received, thread: Some(thread) });
        self.by_topic.insert(topic, id);
        Ok(id)
    }

    fn channel(&self, topic: &str) -> Result<&Channel, IngressError> {
        self.by_topic
            .get(topic)
            .map(|&i| &self.channels[i])
            .ok_or_else(|| IngressError::UnknownTopic(topic.to_string()))
    }

    /// Newest item without consuming it. High-volume topics grant a new lease.
    pub fn latest(&self, topic: &str) -> Result<Option<Item>, IngressError> {
        Ok(match &self.channel(topic)?.storage {
            Storage::Ring(r) => r.latest().map(Item::Record),
            Storage::Pool(p) => p.latest().map(Item::Frame),
        })
    }

    /// Up to `n` newest low-volume records, oldest first.
    pub fn window(&self, topic: &str, n: usize) -> Result<Vec<RingRecord>, IngressError> {
        match &self.channel(topic)?.storage {
            Storage::Ring(r) => Ok(r.window(n)),
            Storage::Pool(_) => Err(IngressError::WrongClass(topic.to_string())),
        }
    }

    pub fn await_trigger(&self, timeout: Duration) -> Result<TriggerOutcome, IngressError> {
        if self.trigger_topic.is_none() {
            return Err(IngressError::NoTriggerTopic);
        }
        Ok(self.trigger.wait(timeout))
    }

    /// Trigger-topic arrivals delivered into staging so far.
    pub fn trigger_arrivals(&self) -> u64 {
        self.trigger.total()
    }

    pub fn ring(&self, topic: &str) -> Option<&Arc<RingBuffer>> {
        match &self.channel(topic).ok()?.storage {
            Storage::Ring(r) => Some(r),
            Storage::Pool(_) => None,
        }
    }

    pub fn pool(&self, topic: &str) -> Option<&Arc<SlotPool>> {
        match &self.channel(topic).ok()?.storage {
            Storage::Pool(p) => Some(p),
            Storage::Ring(_) => None,
        }
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.topic.as_str())
    }

    pub fn counters(&self) -> Vec<ChannelCounters> {
        self.channels
            .iter()
            .map(|c| {
                let (class, rejected, leases_granted) = match &c.storage {
                    Storage::Ring(r) => (ChannelClass::LowVolume, r.rejected(), 0),
                    Storage::Pool(p) => (ChannelClass::HighVolume, p.counters().dropped, p.consumer_leases_granted()),
                };
                ChannelCounters {
                    topic: c.topic.clone(),
                    class,
                    received: c.received.load(Ordering::Relaxed),
                    transport_dropped: c.sub.dropped(),
                    rejected,
                    leases_granted,
                }
            })
            .collect()
    }

    /// True once any subscription reported the transport as shut down.
    pub fn transport_lost(&self) -> bool {
        self.transport_lost.load(Ordering::SeqCst)
    }

    /// Stops receivers and wakes any waiter.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.trigger.close();
        for c in &mut self.channels {
            if let Some(t) = c.thread.take() {
                let _ = t.join();
            }
        }
    }
}

impl Drop for IngressHub {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn store(writer: &mut Writer, env: &Envelope) -> Result<(), IngressError> {
    match writer {
        Writer::Ring(w) => w.push(env.source_ts, env.seq, &env.payload),
        Writer::Pool(w) => w.ingest(env.source_ts, env.seq, &env.payload).map(|_| ()),
    }
}

fn receive_loop(
    sub: Arc<Subscription>,
    mut writer: Writer,
    received: Arc<AtomicU64>,
    trigger: Option<Arc<TriggerSignal>>,
    stop: Arc<AtomicBool>,
    lost: Arc<AtomicBool>,
) {
    while !stop.load(Ordering::SeqCst) {
        match sub.recv_timeout(RECV_POLL) {
            Ok(Some(env)) => {
                received.fetch_add(1, Ordering::Relaxed);
                match store(&mut writer, &env) {
                    Ok(()) => {
                        if let Some(t) = &trigger {
                            t.raise(env.seq, env.source_ts);
                        }
                    }
                    Err(e) => debug!("ingress {}: seq {} not stored: {e}", sub.topic(), env.seq),
                }
            }
            Ok(None) => {}
            Err(e) => {
                warn!("ingress {}: subscription ended: {e}", sub.topic());
                lost.store(true, Ordering::SeqCst);
                if let Some(t) = &trigger {
                    t.close();
                }
                break;
            }
        }
    }
}
