//! Real-time bag replay onto a transport.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use lambda_transport::{monotonic_ns, Transport};

use crate::bag::Bag;
use crate::BenchError;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Playback rate; 2.0 halves every gap.
    pub speed: f64,
    /// Stamp each message with the publish time instead of the recorded time.
    pub realign: bool,
    /// Restart from the first record after the last one.
    pub looped: bool,
    pub stop: Option<Arc<AtomicBool>>,
    /// Wall-clock limit for looped playback.
    pub deadline: Option<Instant>,
    pub record_sends: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { speed: 1.0, realign: true, looped: false, stop: None, deadline: None, record_sends: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sent {
    pub topic: String,
    pub seq: u64,
    pub source_ts: u64,
    /// Offset from replay start.
    pub at: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayReport {
    pub records_sent: u64,
    pub duration: Duration,
    /// Completed passes over the bag.
    pub loops: u64,
    pub sent: Option<Vec<Sent>>,
}

/// Median gap between consecutive records, used between loop passes.
pub fn median_gap(bag: &Bag) -> u64 {
    let mut gaps: Vec<u64> = bag.records.windows(2).map(|w| w[1].ts - w[0].ts).collect();
    if gaps.is_empty() {
        return 0;
    }
    gaps.sort_unstable();
    gaps[gaps.len() / 2]
}

/// Sleeps until `target`, waking early to check `stop`.
fn sleep_until(target: Instant, stop: &Option<Arc<AtomicBool>>) -> bool {
    loop {
        if stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            return false;
        }
        let now = Instant::now();
        if now >= target {
            return true;
        }
        std::thread::sleep((target - now).min(Duration::from_millis(50)));
    }
}

pub fn replay(bag: &Bag, transport: &dyn Transport, opts: &ReplayOptions) -> Result<ReplayReport, BenchError> {
    if !(opts.speed > 0.0 && opts.speed.is_finite()) {
        return Err(BenchError::Config(format!("speed must be positive, got {}", opts.speed)));
    }
    bag.validate()?;
    let mut report = ReplayReport { sent: opts.record_sends.then(Vec::new), ..Default::default() };
    let start = Instant::now();
    let Some(first) = bag.records.first() else {
        return Ok(report);
    };
    let t0 = first.ts;
    let pass_ns = bag.duration_ns() + median_gap(bag).max(1);
    let mut pass = 0u64;
    'outer: loop {
        for rec in &bag.records {
            let offset_ns = (pass as f64 * pass_ns as f64 + (rec.ts - t0) as f64) / opts.speed;
            let target = start + Duration::from_nanos(offset_ns.round() as u64);
            if opts.deadline.is_some_and(|d| target >= d) {
                break 'outer;
            }
            if !sleep_until(target, &opts.stop) {
                break 'outer;
            }
            let topic = &bag.topics[rec.topic as usize];
            let source_ts = if opts.realign { monotonic_ns() } else { rec.ts };
            let receipt = transport.publish(&topic.name, &rec.payload, topic.content_type, source_ts)?;
            report.records_sent += 1;
            if let Some(sent) = report.sent.as_mut() {
                sent.push(Sent { topic: topic.name.clone(), seq: receipt.seq, source_ts, at: start.elapsed() });
            }
        }
        pass += 1;
        report.loops = pass;
        if !opts.looped {
            break;
        }
    }
    report.duration = start.elapsed();
    Ok(report)
}
