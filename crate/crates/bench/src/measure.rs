//! Steady-state RTT capture: warm-up, then fixed-length phases.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use lambda_proto::RttRecord;
use lambda_transport::{monotonic_ns, QosProfile, Transport, RTT_TOPIC};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::BenchError;

const COLLECT_DEPTH: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlan {
    /// Seconds.
    pub warmup: f64,
    pub phase_count: u32,
    /// Seconds.
    pub phase_length: f64,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self { warmup: 20.0, phase_count: 3, phase_length: 20.0 }
    }
}

impl PhasePlan {
    pub fn validate(&self) -> Result<(), BenchError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.warmup) && ok(self.phase_length) && self.phase_count > 0 {
            Ok(())
        } else {
            Err(BenchError::Config(format!("phase plan values must be positive: {self:?}")))
        }
    }

    pub fn total(&self) -> Duration {
        Duration::from_secs_f64(self.warmup + self.phase_count as f64 * self.phase_length)
    }

    /// 1-based phase for an arrival `offset_ns` after the run start; `None`
    /// during warm-up and after the last phase.
    pub fn phase_of(&self, offset_ns: u64) -> Option<u32> {
        let t = offset_ns as f64 / 1e9;
        if t < self.warmup {
            return None;
        }
        let k = ((t - self.warmup) / self.phase_length).floor() as u64;
        (k < self.phase_count as u64).then_some(k as u32 + 1)
    }
}

/// An RTT record and the monotonic time it reached the collector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RttSample {
    pub record: RttRecord,
    pub arrival: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseBins {
    /// `phases[i]` holds phase `i + 1`.
    pub phases: Vec<Vec<RttSample>>,
    pub warmup_dropped: usize,
    pub late_dropped: usize,
}

impl PhaseBins {
    pub fn total(&self) -> usize {
        self.phases.iter().map(Vec::len).sum()
    }
}

/// Bins by arrival time relative to `run_start`.
pub fn bin(samples: Vec<RttSample>, plan: &PhasePlan, run_start: u64) -> PhaseBins {
    let mut out = PhaseBins { phases: vec![Vec::new(); plan.phase_count as usize], ..Default::default() };
    for s in samples {
        let offset = s.arrival.saturating_sub(run_start);
        match plan.phase_of(offset) {
            Some(p) => out.phases[p as usize - 1].push(s),
            None if (offset as f64 / 1e9) < plan.warmup => out.warmup_dropped += 1,
            None => out.late_dropped += 1,
        }
    }
    out
}

/// Background subscriber on the RTT topic.
pub struct Collector {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<(Vec<RttSample>, u64)>>,
}

impl Collector {
    pub fn start(transport: &dyn Transport) -> Result<Collector, BenchError> {
        let sub = transport.subscribe(RTT_TOPIC, QosProfile::keep_last(COLLECT_DEPTH))?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("rtt-collector".into())
            .spawn(move || {
                let mut out = Vec::new();
                let mut bad = 0u64;
                while !flag.load(Ordering::SeqCst) {
                    match sub.recv_timeout(Duration::from_millis(20)) {
                        Ok(Some(env)) => {
                            let arrival = monotonic_ns();
                            match RttRecord::from_payload(&env.payload) {
                                Ok(record) => out.push(RttSample { record, arrival }),
                                Err(_) => bad += 1,
                            }
                        }
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
                let arrival = monotonic_ns();
                for env in sub.drain() {
                    match RttRecord::from_payload(&env.payload) {
                        Ok(record) => out.push(RttSample { record, arrival }),
                        Err(_) => bad += 1,
                    }
                }
                (out, bad + sub.dropped())
            })
            .map_err(BenchError::Io)?;
        Ok(Collector { stop, thread: Some(thread) })
    }

    /// Stops collecting and returns everything received.
    pub fn finish(mut self) -> Vec<RttSample> {
        self.stop.store(true, Ordering::SeqCst);
        let (out, lost) = self.thread.take().and_then(|t| t.join().ok()).unwrap_or_default();
        if lost > 0 {
            warn!("rtt collector: {lost} records lost or malformed");
        }
        out
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Collects for the whole plan, starting now.
pub fn measure(transport: &dyn Transport, plan: &PhasePlan) -> Result<PhaseBins, BenchError> {
    plan.validate()?;
    let start = monotonic_ns();
    let c = Collector::start(transport)?;
    std::thread::sleep(plan.total());
    Ok(bin(c.finish(), plan, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(arrival_s: f64) -> RttSample {
        RttSample {
            record: RttRecord { function: "f".into(), cause_seq: 0, t_in: 0, t_out: 1 },
            arrival: (arrival_s * 1e9) as u64,
        }
    }

    #[test]
    fn phase_boundaries() {
        let p = PhasePlan::default();
        assert_eq!(p.phase_of(19_000_000_000), None);
        assert_eq!(p.phase_of(25_000_000_000), Some(1));
        assert_eq!(p.phase_of(20_000_000_000), Some(1));
        assert_eq!(p.phase_of(40_000_000_000), Some(2));
        assert_eq!(p.phase_of(79_999_999_999), Some(3));
        assert_eq!(p.phase_of(80_000_000_000), None);
        assert_eq!(p.total(), Duration::from_secs(80));
    }

    #[test]
    fn bin_counts_drops() {
        let b = bin(vec![sample(1.0), sample(19.9), sample(21.0), sample(45.0), sample(90.0)], &PhasePlan::default(), 0);
        assert_eq!(b.warmup_dropped, 2);
        assert_eq!(b.late_dropped, 1);
        assert_eq!(b.phases.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 0]);
    }

    #[test]
    fn invalid_plans() {
        assert!(PhasePlan { warmup: 0.0, ..Default::default() }.validate().is_err());
        assert!(PhasePlan { phase_count: 0, ..Default::default() }.validate().is_err());
        assert!(PhasePlan { phase_length: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
