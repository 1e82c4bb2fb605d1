//! Wakeup signal for event-driven execution.
//!
//! Arrivals on the trigger topic accumulate while the consumer is busy and
//! are handed over as a single wakeup carrying their count.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerOutcome {
    /// `count` arrivals coalesced into this wakeup; `cause_*` describe the
    /// newest of them.
    Triggered { count: u64, cause_seq: u64, cause_source_ts: u64 },
    TimedOut,
    /// The signal was closed (hub shutting down).
    Closed,
}

#[derive(Default)]
struct State {
    pending: u64,
    total: u64,
    cause_seq: u64,
    cause_source_ts: u64,
    closed: bool,
}

#[derive(Default)]
pub struct TriggerSignal {
    state: Mutex<State>,
    cv: Condvar,
}

impl TriggerSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self, seq: u64, source_ts: u64) {
        let mut st = self.state.lock().unwrap();
        st.pending += 1;
        st.total += 1;
        st.cause_seq = seq;
        st.cause_source_ts = source_ts;
        drop(st);
        self.cv.notify_one();
    }

    /// Arrivals ever raised.
    pub fn total(&self) -> u64 {
        self.state.lock().unwrap().total
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.cv.notify_all();
    }

    pub fn wait(&self, timeout: Duration) -> TriggerOutcome {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if st.pending > 0 {
                let count = std::mem::take(&mut st.pending);
                return TriggerOutcome::Triggered { count, cause_seq: st.cause_seq, cause_source_ts: st.cause_source_ts };
            }
            if st.closed {
                return TriggerOutcome::Closed;
            }
            let now = Instant::now();
            if now >= deadline {
                return TriggerOutcome::TimedOut;
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}
