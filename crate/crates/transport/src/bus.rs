//! In-process topic table with bounded per-subscriber queues.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::clock::monotonic_ns;
use crate::envelope::{ContentType, Envelope, DEFAULT_MAX_PAYLOAD};
use crate::qos::QosProfile;
use crate::{PublishReceipt, Result, Transport, TransportError};

#[derive(Default)]
struct QueueState {
    items: VecDeque<Envelope>,
    closed: bool,
}

/// KeepLast queue behind one subscription handle.
pub(crate) struct SubQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
    depth: usize,
    enqueued: AtomicU64,
    dropped: AtomicU64,
    detached: AtomicBool,
}

impl SubQueue {
    pub(crate) fn new(depth: usize) -> Self {
        Self {
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
            depth,
            enqueued: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            detached: AtomicBool::new(false),
        }
    }

    /// Enqueues, evicting the oldest entry when the history is full.
    pub(crate) fn push(&self, env: Envelope) {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return;
        }
        if st.items.len() == self.depth {
            st.items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        st.items.push_back(env);
        self.enqueued.fetch_add(1, Ordering::Relaxed);
        drop(st);
        self.ready.notify_one();
    }

    pub(crate) fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    pub(crate) fn is_detached(&self) -> bool {
        self.detached.load(Ordering::Relaxed)
    }
}

/// Receiving end of one subscription. Delivers envelopes published after it
/// was created, in publish order, keeping at most `history_depth` undrained.
pub struct Subscription {
    topic: Arc<str>,
    qos: QosProfile,
    queue: Arc<SubQueue>,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("topic", &self.topic)
            .field("qos", &self.qos)
            .field("dropped", &self.dropped())
            .finish()
    }
}

impl Subscription {
    pub(crate) fn new(topic: Arc<str>, qos: QosProfile, queue: Arc<SubQueue>) -> Self {
        Self { topic, qos, queue }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn qos(&self) -> QosProfile {
        self.qos
    }

    /// Envelopes discarded by history overflow.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    /// Envelopes ever enqueued to this subscription (received + dropped + pending).
    pub fn enqueued(&self) -> u64 {
        self.queue.enqueued.load(Ordering::Relaxed)
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.state.lock().unwrap().items.pop_front()
    }

    /// Waits up to `timeout` for the next envelope. Returns `Ok(None)` on
    /// timeout and `Err(ShutDown)` once the transport closed and the queue
    /// is drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Envelope>> {
        let deadline = Instant::now() + timeout;
        let mut st = self.queue.state.lock().unwrap();
        loop {
            if let Some(env) = st.items.pop_front() {
                return Ok(Some(env));
            }
            if st.closed {
                return Err(TransportError::ShutDown);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self.queue.ready.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    /// Removes and returns everything currently queued.
    pub fn drain(&self) -> Vec<Envelope> {
        self.queue.state.lock().unwrap().items.drain(..).collect()
    }

    pub fn is_closed(&self) -> bool {
        self.queue.state.lock().unwrap().closed
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.detached.store(true, Ordering::Relaxed);
    }
}

struct TopicState {
    next_seq: u64,
    subscribers: Vec<Arc<SubQueue>>,
}

struct Topic {
    state: Mutex<TopicState>,
}

/// In-process transport. Topics are created on first publish or subscribe.
pub struct Bus {
    topics: Mutex<HashMap<Arc<str>, Arc<Topic>>>,
    shut: AtomicBool,
    max_payload: usize,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::with_max_payload(DEFAULT_MAX_PAYLOAD)
    }

    pub fn with_max_payload(max_payload: usize) -> Self {
        Self { topics: Mutex::new(HashMap::new()), shut: AtomicBool::new(false), max_payload }
    }

    pub fn max_payload(&self) -> usize {
        self.max_payload
    }

    fn topic(&self, name: &str) -> (Arc<str>, Arc<Topic>) {
        let mut topics = self.topics.lock().unwrap();
        if let Some((k, v)) = topics.get_key_value(name) {
            return (k.clone(), v.clone());
        }
        let key: Arc<str> = Arc::from(name);
        let topic = Arc::new(Topic { state: Mutex::new(TopicState { next_seq: 1, subscribers: Vec::new() }) });
        topics.insert(key.clone(), topic.clone());
        (key, topic)
    }

    pub(crate) fn subscribe_queue(&self, topic: &str, qos: QosProfile) -> Result<(Arc<str>, Arc<SubQueue>)> {
        if self.is_shut_down() {
            return Err(TransportError::ShutDown);
        }
        if topic.is_empty() {
            return Err(TransportError::EmptyTopic);
        }
        qos.validate()?;
        let (name, t) = self.topic(topic);
        let queue = Arc::new(SubQueue::new(qos.history_depth));
        t.state.lock().unwrap().subscribers.push(queue.clone());
        Ok((name, queue))
    }

    /// Number of live subscriptions on `topic`.
    pub fn subscriber_count(&self, topic: &str) -> usize {
        let topics = self.topics.lock().unwrap();
        topics
            .get(topic)
            .map(|t| t.state.lock().unwrap().subscribers.iter().filter(|q| !q.is_detached()).count())
            .unwrap_or(0)
    }
}

impl Transport for Bus {
    fn publish(&self, topic: &str, payload: &[u8], content_type: ContentType, source_ts: u64) -> Result<PublishReceipt> {
        if self.is_shut_down() {
            return Err(TransportError::ShutDown);
        }
        if topic.is_empty() {
            return Err(TransportError::EmptyTopic);
        }
        if payload.len() > self.max_payload {
            return Err(TransportError::PayloadTooLarge { len: payload.len(), max: self.max_payload });
        }
        let payload: Arc<[u8]> = Arc::from(payload);
        let (name, t) = self.topic(topic);
        // The topic lock spans seq assignment and fan-out so that every
        // subscriber observes seq order.
        let mut st = t.state.lock().unwrap();
        let seq = st.next_seq;
        st.next_seq += 1;
        st.subscribers.retain(|q| !q.is_detached());
        let env = Envelope { topic: name, seq, source_ts, publish_ts: monotonic_ns(), content_type, payload };
        for q in &st.subscribers {
            q.push(env.clone());
        }
        Ok(PublishReceipt { seq, delivered: st.subscribers.len() })
    }

    fn subscribe(&self, topic: &str, qos: QosProfile) -> Result<Subscription> {
        let (name, queue) = self.subscribe_queue(topic, qos)?;
        Ok(Subscription::new(name, qos, queue))
    }

    fn shutdown(&self) {
        self.shut.store(true, Ordering::SeqCst);
        let topics = self.topics.lock().unwrap();
        for t in topics.values() {
            for q in &t.state.lock().unwrap().subscribers {
                q.close();
            }
        }
    }

    fn is_shut_down(&self) -> bool {
        self.shut.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn publish(bus: &Bus, topic: &str, byte: u8) -> PublishReceipt {
        bus.publish(topic, &[byte], ContentType::RawBytes, 0).unwrap()
    }

    #[test]
    fn keep_last_two_yields_last_two() {
        let bus = Bus::new();
        let sub = bus.subscribe("t", QosProfile::keep_last(2)).unwrap();
        for b in 1..=3 {
            publish(&bus, "t", b);
        }
        let got: Vec<u8> = sub.drain().iter().map(|e| e.payload[0]).collect();
        assert_eq!(got, vec![2, 3]);
        assert_eq!(sub.dropped(), 1);
    }

    #[test]
    fn no_subscribers_is_fine() {
        let bus = Bus::new();
        let r = publish(&bus, "nobody", 0);
        assert_eq!(r, PublishReceipt { seq: 1, delivered: 0 });
        assert_eq!(publish(&bus, "nobody", 0).seq, 2);
    }

    #[test]
    fn volatile_durability() {
        let bus = Bus::new();
        publish(&bus, "t", 1);
        let sub = bus.subscribe("t", QosProfile::default()).unwrap();
        publish(&bus, "t", 2);
        let got: Vec<u8> = sub.drain().iter().map(|e| e.payload[0]).collect();
        assert_eq!(got, vec![2]);
    }

    #[test]
    fn keep_last_ten_of_fifteen() {
        let bus = Bus::new();
        let sub = bus.subscribe("t", QosProfile::keep_last(10)).unwrap();
        for b in 1..=15 {
            publish(&bus, "t", b);
        }
        let seqs: Vec<u64> = sub.drain().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, (6..=15).collect::<Vec<_>>());
        assert_eq!(sub.dropped(), 5);
    }

    #[test]
    fn fan_out_shares_seq() {
        let bus = Bus::new();
        let a = bus.subscribe("t", QosProfile::default()).unwrap();
        let b = bus.subscribe("t", QosProfile::default()).unwrap();
        assert_eq!(publish(&bus, "t", 9).delivered, 2);
        let (ea, eb) = (a.try_recv().unwrap(), b.try_recv().unwrap());
        assert_eq!(ea.seq, eb.seq);
        assert!(Arc::ptr_eq(&ea.payload, &eb.payload));
    }

    #[test]
    fn dropped_subscription_is_pruned() {
        let bus = Bus::new();
        let a = bus.subscribe("t", QosProfile::default()).unwrap();
        drop(a);
        assert_eq!(publish(&bus, "t", 0).delivered, 0);
    }

    #[test]
    fn errors() {
        let bus = Bus::with_max_payload(4);
        assert!(matches!(
            bus.publish("t", &[0; 5], ContentType::RawBytes, 0),
            Err(TransportError::PayloadTooLarge { len: 5, max: 4 })
        ));
        assert!(matches!(bus.publish("", &[], ContentType::RawBytes, 0), Err(TransportError::EmptyTopic)));
        assert!(matches!(bus.subscribe("t", QosProfile::keep_last(0)), Err(TransportError::InvalidQos(_))));
        let sub = bus.subscribe("t", QosProfile::default()).unwrap();
        bus.shutdown();
        assert!(matches!(bus.publish("t", &[], ContentType::RawBytes, 0), Err(TransportError::ShutDown)));
        assert!(matches!(bus.subscribe("t", QosProfile::default()), Err(TransportError::ShutDown)));
        assert!(matches!(sub.recv_timeout(Duration::from_millis(1)), Err(TransportError::ShutDown)));
    }

    #[test]
    fn recv_times_out() {
        let bus = Bus::new();
        let sub = bus.subscribe("t", QosProfile::default()).unwrap();
        assert!(sub.recv_timeout(Duration::from_millis(5)).unwrap().is_none());
    }

    #[test]
    fn timestamps() {
        let bus = Bus::new();
        let sub = bus.subscribe("t", QosProfile::default()).unwrap();
        let before = monotonic_ns();
        bus.publish("t", b"x", ContentType::RawBytes, 7).unwrap();
        let e = sub.try_recv().unwrap();
        assert_eq!(e.source_ts, 7);
        assert!(e.publish_ts >= before);
    }
}
