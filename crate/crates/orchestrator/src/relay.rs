//! Upstream log backlog with batching.
//!
//! Records queue here until the upstream thread ships them. Batches stay
//! in flight until the registry acks them and go back to the front of the
//! queue if the connection drops first, so order survives reconnects.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use lambda_proto::LogRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayConfig {
    pub batch_max: usize,
    pub flush_interval: Duration,
    /// Records held while upstream is unavailable, in flight included.
    pub backlog: usize,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self { batch_max: 100, flush_interval: Duration::from_millis(500), backlog: 10_000 }
    }
}

#[derive(Debug)]
pub struct Relay {
    cfg: RelayConfig,
    queue: VecDeque<LogRecord>,
    in_flight: BTreeMap<u64, Vec<LogRecord>>,
    last_flush: Duration,
    dropped: u64,
}

impl Relay {
    pub fn new(cfg: RelayConfig) -> Self {
        Self { cfg, queue: VecDeque::new(), in_flight: BTreeMap::new(), last_flush: Duration::ZERO, dropped: 0 }
    }

    pub fn push(&mut self, rec: LogRecord) {
        self.queue.push_back(rec);
        self.trim();
    }

    fn held(&self) -> usize {
        self.queue.len() + self.in_flight.values().map(Vec::len).sum::<usize>()
    }

    fn trim(&mut self) {
        while self.held() > self.cfg.backlog {
            if self.queue.pop_front().is_none() {
                // Only in-flight records left: drop the oldest batch's head.
                let Some(mut first) = self.in_flight.first_entry() else { break };
                first.get_mut().remove(0);
                if first.get().is_empty() {
                    first.remove();
                }
            }
            self.dropped += 1;
        }
    }

    /// Records discarded because the backlog was full.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.values().map(Vec::len).sum()
    }

    /// A full batch is waiting, or records have waited a flush interval.
    pub fn due(&self, now: Duration) -> bool {
        self.queue.len() >= self.cfg.batch_max
            || (!self.queue.is_empty() && now.saturating_sub(self.last_flush) >= self.cfg.flush_interval)
    }

    /// Removes the next batch and tracks it under `id` until acked.
    pub fn take_batch(&mut self, id: u64, now: Duration) -> Vec<LogRecord> {
        let n = self.queue.len().min(self.cfg.batch_max);
        let batch: Vec<LogRecord> = self.queue.drain(..n).collect();
        self.in_flight.insert(id, batch.clone());
        self.last_flush = now;
        batch
    }

    pub fn ack(&mut self, id: u64) -> bool {
        self.in_flight.remove(&id).is_some()
    }

    /// Connection lost: unacked batches go back in front, oldest first.
    pub fn requeue_in_flight(&mut self) {
        let batches = std::mem::take(&mut self.in_flight);
        for (_, batch) in batches.into_iter().rev() {
            for rec in batch.into_iter().rev() {
                self.queue.push_front(rec);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lambda_proto::LogLevel;

    fn rec(i: u64) -> LogRecord {
        LogRecord::new(LogLevel::Info, i, "f", &i.to_string())
    }

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn flushes_on_size_or_age() {
        let mut r = Relay::new(RelayConfig::default());
        r.last_flush = ms(1000);
        r.push(rec(0));
        assert!(!r.due(ms(1100)));
        assert!(r.due(ms(1500)));
        for i in 1..100 {
            r.push(rec(i));
        }
        assert!(r.due(ms(1001)));
        assert_eq!(r.take_batch(1, ms(1001)).len(), 100);
        assert!(!r.due(ms(1002)));
    }

    #[test]
    fn overflow_drops_oldest() {
        let mut r = Relay::new(RelayConfig { backlog: 3, ..Default::default() });
        for i in 0..5 {
            r.push(rec(i));
        }
        assert_eq!(r.dropped(), 2);
        let b = r.take_batch(1, ms(0));
        assert_eq!(b.iter().map(|x| x.ts).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn requeue_preserves_order() {
        let mut r = Relay::new(RelayConfig { batch_max: 2, ..Default::default() });
        for i in 0..5 {
            r.push(rec(i));
        }
        r.take_batch(7, ms(0));
        r.take_batch(8, ms(0));
        r.ack(7);
        r.requeue_in_flight();
        assert_eq!(r.queue.iter().map(|x| x.ts).collect::<Vec<_>>(), vec![2, 3, 4]);
    }
}
